#ifndef ECOPRUNE_ECOPRUNE_HPP
#define ECOPRUNE_ECOPRUNE_HPP

#include "adam.hpp"
#include "archive.hpp"
#include "compact.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "eval.hpp"
#include "gates.hpp"
#include "grad_check.hpp"
#include "ops.hpp"
#include "parallel.hpp"
#include "pruner.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

#endif
