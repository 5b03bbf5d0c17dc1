#include "tiltfield/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace tiltfield {

int default_workers() {
    if (const char* env = std::getenv("TILTFIELD_WORKERS")) {
        try {
            const int w = std::stoi(env);
            if (w >= 1) {
                return w;
            }
        } catch (const std::exception&) {
        }
    }
    return 1;
}

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t, int)>& fn) {
    if (n == 0) {
        return;
    }
    const std::size_t w = std::clamp<std::size_t>(workers < 1 ? 1 : workers, 1, n);
    if (w == 1) {
        fn(0, n, 0);
        return;
    }
    const std::size_t chunk = (n + w - 1) / w;
    std::vector<std::exception_ptr> errors(w);
    std::vector<std::thread> threads;
    threads.reserve(w - 1);
    auto run = [&](std::size_t id) {
        const std::size_t begin = std::min(n, id * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        try {
            if (begin < end) {
                fn(begin, end, static_cast<int>(id));
            }
        } catch (...) {
            errors[id] = std::current_exception();
        }
    };
    for (std::size_t id = 1; id < w; ++id) {
        threads.emplace_back(run, id);
    }
    run(0);
    for (auto& t : threads) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace tiltfield
