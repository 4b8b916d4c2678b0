#pragma once

#include "trajgmm/banded.hpp"
#include "trajgmm/cluster.hpp"
#include "trajgmm/config.hpp"
#include "trajgmm/error.hpp"
#include "trajgmm/eval.hpp"
#include "trajgmm/geo.hpp"
#include "trajgmm/gmm.hpp"
#include "trajgmm/ingest.hpp"
#include "trajgmm/io.hpp"
#include "trajgmm/pipeline.hpp"
#include "trajgmm/reconstruct.hpp"
#include "trajgmm/synth.hpp"
