// Copyright 2026-present the relalign project
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

#include "relalign/anchor_select.hpp"
#include "relalign/caption.hpp"
#include "relalign/embed_store.hpp"
#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/kmeans.hpp"
#include "relalign/parallel.hpp"
#include "relalign/pipeline.hpp"
#include "relalign/random.hpp"
#include "relalign/relrep.hpp"
#include "relalign/retrieval.hpp"
#include "relalign/synth.hpp"
