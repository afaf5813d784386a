// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The kwsnas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "kwsnas/tensor.hpp"
#include "kwsnas/ops.hpp"
#include "kwsnas/quantization.hpp"
#include "kwsnas/layers.hpp"
#include "kwsnas/architecture.hpp"
#include "kwsnas/cost_model.hpp"
#include "kwsnas/supernet.hpp"
#include "kwsnas/dsp.hpp"
#include "kwsnas/dataset.hpp"
#include "kwsnas/checkpoint.hpp"
#include "kwsnas/search.hpp"
