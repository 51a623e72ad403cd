// Copyright 2026 The ssm-tp Authors
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

#include "ssmtp/agreement.hpp"
#include "ssmtp/cache.hpp"
#include "ssmtp/engine.hpp"
#include "ssmtp/errors.hpp"
#include "ssmtp/fabric.hpp"
#include "ssmtp/half.hpp"
#include "ssmtp/mixer.hpp"
#include "ssmtp/scan.hpp"
#include "ssmtp/tensor.hpp"
#include "ssmtp/tp.hpp"
