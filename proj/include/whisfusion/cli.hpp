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

#pragma once

#include <string>

namespace whisfusion {

// Full command-line entry point. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.
int run_cli(int argc, const char* const* argv);

// Advisory lock on an output directory so two runs do not interleave writes.
// Throws IoError when the lock is already held; removed on destruction.
class DirLock {
  public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::string path_;
};

}  // namespace whisfusion
