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

#include <condition_variable>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace whisfusion {

// Minimal fixed-size pool. Work items write to disjoint outputs, so results
// are bit-identical for any thread count; with a single worker everything
// runs inline on the calling thread.
class ThreadPool {
  public:
    explicit ThreadPool(int n_threads) {
        if (n_threads < 1) n_threads = 1;
        for (int i = 0; i < n_threads - 1; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(i) for i in [0, n); blocks until all items finish.
    void parallel_for(int n, const std::function<void(int)>& fn) {
        if (n <= 0) return;
        if (workers_.empty() || n == 1) {
            for (int i = 0; i < n; ++i) fn(i);
            return;
        }
        std::atomic<int> next{0}, done{0};
        std::mutex done_mu;
        std::condition_variable done_cv;
        auto body = [&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) break;
                fn(i);
                if (done.fetch_add(1) + 1 == n) {
                    std::lock_guard<std::mutex> lk(done_mu);
                    done_cv.notify_all();
                }
            }
        };
        {
            std::lock_guard<std::mutex> lk(mu_);
            for (size_t i = 0; i < workers_.size(); ++i) queue_.push(body);
        }
        cv_.notify_all();
        body();  // caller participates
        std::unique_lock<std::mutex> lk(done_mu);
        done_cv.wait(lk, [&] { return done.load() >= n; });
    }

    static ThreadPool& global();
    static void set_global_threads(int n);

  private:
    void worker_loop() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
                if (stop_ && queue_.empty()) return;
                job = std::move(queue_.front());
                queue_.pop();
            }
            job();
        }
    }

    std::vector<std::thread> workers_;
    std::queue<std::function<void()>> queue_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
};

}  // namespace whisfusion
