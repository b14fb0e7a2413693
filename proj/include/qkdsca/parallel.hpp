/*
 * SPDX-FileCopyrightText: Copyright 2026 The qkdsca Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qkdsca {

namespace detail {
inline std::atomic<unsigned> &thread_count_setting() {
    static std::atomic<unsigned> value{0};
    return value;
}
} // namespace detail

/// Worker count used by the parallel loops. Zero selects
/// std::thread::hardware_concurrency(), overridable with QKDSCA_THREADS.
inline void set_thread_count(unsigned n) { detail::thread_count_setting() = n; }

inline unsigned thread_count() {
    unsigned n = detail::thread_count_setting();
    if (n == 0) {
        if (const char *env = std::getenv("QKDSCA_THREADS"))
            n = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
    }
    if (n == 0)
        n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

/// Runs body(begin, end) over contiguous, disjoint chunks of [0, n). Each
/// index is visited exactly once; results written per index are therefore
/// independent of the worker count.
template <typename Body>
void parallel_for(std::size_t n, std::size_t min_chunk, Body &&body) {
    if (n == 0)
        return;
    const std::size_t workers = std::min<std::size_t>(
        thread_count(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
    if (workers <= 1) {
        body(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::exception_ptr failure;
    std::mutex failure_lock;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; w++) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e)
            break;
        pool.emplace_back([&, b, e] {
            try {
                body(b, e);
            } catch (...) {
                std::lock_guard<std::mutex> g(failure_lock);
                if (!failure)
                    failure = std::current_exception();
            }
        });
    }
    for (auto &t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace qkdsca
