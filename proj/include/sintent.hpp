#pragma once

#include "sintent/checkpoint.hpp"
#include "sintent/config.hpp"
#include "sintent/corpus.hpp"
#include "sintent/diagnostics.hpp"
#include "sintent/error.hpp"
#include "sintent/evaluate.hpp"
#include "sintent/gradcheck.hpp"
#include "sintent/layers.hpp"
#include "sintent/metrics.hpp"
#include "sintent/model.hpp"
#include "sintent/objective.hpp"
#include "sintent/run_config.hpp"
#include "sintent/stream.hpp"
#include "sintent/syngen.hpp"
#include "sintent/tensor.hpp"
#include "sintent/train.hpp"
