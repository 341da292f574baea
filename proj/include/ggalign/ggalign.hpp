#pragma once

#include "ggalign/checkpoint.hpp"
#include "ggalign/config.hpp"
#include "ggalign/covalign.hpp"
#include "ggalign/errors.hpp"
#include "ggalign/graphopt.hpp"
#include "ggalign/logging.hpp"
#include "ggalign/membank.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/params.hpp"
#include "ggalign/refine.hpp"
#include "ggalign/rng.hpp"
#include "ggalign/synth.hpp"
#include "ggalign/tensor.hpp"
#include "ggalign/trainer.hpp"
