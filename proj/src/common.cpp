// Copyright 2026 The Whisfusion Authors
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

#include "whisfusion/common.hpp"

#include <cstdio>

#include "whisfusion/threadpool.hpp"

namespace whisfusion {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

namespace {
int g_pool_threads = 1;
ThreadPool* g_pool = nullptr;
}  // namespace

ThreadPool& ThreadPool::global() {
    if (!g_pool) g_pool = new ThreadPool(g_pool_threads);
    return *g_pool;
}

void ThreadPool::set_global_threads(int n) {
    if (g_pool) {
        delete g_pool;
        g_pool = nullptr;
    }
    g_pool_threads = n < 1 ? 1 : n;
}

}  // namespace whisfusion
