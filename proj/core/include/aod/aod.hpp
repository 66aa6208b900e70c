/* Copyright 2026 The AOD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef AOD_AOD_HPP_
#define AOD_AOD_HPP_

#include "aod/activation_store.hpp"
#include "aod/analysis.hpp"
#include "aod/disentangler.hpp"
#include "aod/error.hpp"
#include "aod/grad_engine.hpp"
#include "aod/intervention.hpp"
#include "aod/rng.hpp"
#include "aod/synthetic.hpp"

#endif  // AOD_AOD_HPP_
