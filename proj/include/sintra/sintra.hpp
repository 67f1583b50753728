#pragma once

#include <sintra/error.hpp>
#include <sintra/metrics.hpp>
#include <sintra/midi.hpp>
#include <sintra/model_io.hpp>
#include <sintra/nn/autograd.hpp>
#include <sintra/nn/checkpoint.hpp>
#include <sintra/nn/optim.hpp>
#include <sintra/nn/stage_model.hpp>
#include <sintra/nn/tensor.hpp>
#include <sintra/pgroup.hpp>
#include <sintra/pianoroll.hpp>
#include <sintra/pipeline.hpp>
#include <sintra/pyramid.hpp>
#include <sintra/random.hpp>
#include <sintra/sampling.hpp>
