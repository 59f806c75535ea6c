// Copyright 2026 The mrt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "mrt/allocation.hpp"
#include "mrt/config.hpp"
#include "mrt/empirical_bayes.hpp"
#include "mrt/error.hpp"
#include "mrt/features.hpp"
#include "mrt/fixture.hpp"
#include "mrt/linalg.hpp"
#include "mrt/nelder_mead.hpp"
#include "mrt/posterior.hpp"
#include "mrt/prior.hpp"
#include "mrt/quadrature.hpp"
#include "mrt/rng.hpp"
#include "mrt/service.hpp"
#include "mrt/sim.hpp"
#include "mrt/testbed.hpp"
