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

#ifndef TOMO_KLIC_PARALLEL_HPP
#define TOMO_KLIC_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tomo_klic
{
    // Runs fn(i) for i in [0, n) on up to `threads` workers. Work is handed out in small chunks;
    // callers write results by index so the outcome does not depend on scheduling.
    // threads == 0 selects std::thread::hardware_concurrency().
    template <typename Fn>
    void parallel_for(std::size_t n, std::size_t threads, Fn &&fn)
    {
        if (threads == 0)
            threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        threads = std::min(threads, std::max<std::size_t>(n, 1));

        if (threads <= 1)
        {
            for (std::size_t i = 0; i < n; ++i)
                fn(i);
            return;
        }

        const std::size_t chunk = std::max<std::size_t>(1, n / (threads * 16));
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;

        auto worker = [&]()
        {
            try
            {
                for (;;)
                {
                    const std::size_t begin = next.fetch_add(chunk);
                    if (begin >= n)
                        break;
                    const std::size_t end = std::min(n, begin + chunk);
                    for (std::size_t i = begin; i < end; ++i)
                        fn(i);
                }
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next.store(n);
            }
        };

        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
        for (auto &th : pool)
            th.join();
        if (error)
            std::rethrow_exception(error);
    }
}

#endif
