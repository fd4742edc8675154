#pragma once

#include "partialfl/config.hpp"
#include "partialfl/data.hpp"
#include "partialfl/errors.hpp"
#include "partialfl/federation.hpp"
#include "partialfl/gradcheck.hpp"
#include "partialfl/losses.hpp"
#include "partialfl/metrics.hpp"
#include "partialfl/models.hpp"
#include "partialfl/nn.hpp"
#include "partialfl/rng.hpp"
#include "partialfl/runner.hpp"
#include "partialfl/tensor.hpp"
