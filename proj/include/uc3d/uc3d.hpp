// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

#include "uc3d/augment.hpp"
#include "uc3d/contrast.hpp"
#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/diffmath/checkpoint.hpp"
#include "uc3d/diffmath/gradcheck.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/diffmath/tensor.hpp"
#include "uc3d/encoders.hpp"
#include "uc3d/geometry.hpp"
#include "uc3d/geometry_io.hpp"
#include "uc3d/strategies.hpp"
#include "uc3d/synthdata.hpp"
#include "uc3d/trainer.hpp"
