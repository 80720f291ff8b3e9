#pragma once

#include "vitprune/config.hpp"
#include "vitprune/cost_model.hpp"
#include "vitprune/harness.hpp"
#include "vitprune/image.hpp"
#include "vitprune/model.hpp"
#include "vitprune/model_io.hpp"
#include "vitprune/pruning.hpp"
#include "vitprune/tensor.hpp"
