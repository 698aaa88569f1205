#pragma once

#include "spineseg/checkpoint.hpp"
#include "spineseg/config.hpp"
#include "spineseg/dataio.hpp"
#include "spineseg/error.hpp"
#include "spineseg/eval.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/labels.hpp"
#include "spineseg/loss.hpp"
#include "spineseg/maskgen.hpp"
#include "spineseg/metrics.hpp"
#include "spineseg/net.hpp"
#include "spineseg/plot.hpp"
#include "spineseg/preprocess.hpp"
#include "spineseg/train.hpp"
#include "spineseg/volume.hpp"
