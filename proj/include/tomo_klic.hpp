// SPDX-License-Identifier: Apache-2.0
//
// tomo-klic: multiple-scatterer detection for multibaseline SAR tomography
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


#ifndef TOMO_KLIC_HPP
#define TOMO_KLIC_HPP

#include "tomo_klic/common.hpp"
#include "tomo_klic/random.hpp"
#include "tomo_klic/parallel.hpp"
#include "tomo_klic/signal_model.hpp"
#include "tomo_klic/dictionary.hpp"
#include "tomo_klic/sparse_estimation.hpp"
#include "tomo_klic/detection.hpp"
#include "tomo_klic/scenario.hpp"
#include "tomo_klic/calibration.hpp"
#include "tomo_klic/experiments.hpp"
#include "tomo_klic/stack_io.hpp"
#include "tomo_klic/run_config.hpp"

#endif
