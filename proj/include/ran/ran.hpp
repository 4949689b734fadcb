#pragma once

#include "ran/attention.hpp"
#include "ran/checkpoint.hpp"
#include "ran/config.hpp"
#include "ran/data.hpp"
#include "ran/errors.hpp"
#include "ran/heads.hpp"
#include "ran/memory_review.hpp"
#include "ran/metrics.hpp"
#include "ran/model.hpp"
#include "ran/ops.hpp"
#include "ran/recurrence.hpp"
#include "ran/rng.hpp"
#include "ran/rope.hpp"
#include "ran/tensor.hpp"
#include "ran/training.hpp"
