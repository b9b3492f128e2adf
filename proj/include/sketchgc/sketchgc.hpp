// Copyright 2026 The sketchgc Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

#include "sketchgc/casq.hpp"
#include "sketchgc/cluster.hpp"
#include "sketchgc/core.hpp"
#include "sketchgc/distsim.hpp"
#include "sketchgc/error.hpp"
#include "sketchgc/quantize.hpp"
#include "sketchgc/sketch.hpp"
#include "sketchgc/sparse.hpp"
#include "sketchgc/verify.hpp"
#include "sketchgc/wire.hpp"
