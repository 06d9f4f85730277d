#pragma once

#include "lmmvae/baselines/categorical_input.hpp"
#include "lmmvae/baselines/pca.hpp"
#include "lmmvae/baselines/vae.hpp"
#include "lmmvae/eval/metrics.hpp"
#include "lmmvae/experiment.hpp"
#include "lmmvae/io/checkpoint.hpp"
#include "lmmvae/io/csv.hpp"
#include "lmmvae/methods.hpp"
#include "lmmvae/model/lmmvae.hpp"
#include "lmmvae/model/loss.hpp"
#include "lmmvae/nn/adam.hpp"
#include "lmmvae/nn/gaussian.hpp"
#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/mlp.hpp"
#include "lmmvae/nn/rng.hpp"
#include "lmmvae/nn/serialize.hpp"
#include "lmmvae/re/design.hpp"
#include "lmmvae/re/kernel.hpp"
#include "lmmvae/sim/simgen.hpp"
