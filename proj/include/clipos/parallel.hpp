#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace clipos {

/// Runs body(i) for i in [0, n) under OpenMP. Each index must write only
/// its own output slot. The exception of the lowest failing index is
/// rethrown after the loop, so errors are reported deterministically.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    std::exception_ptr error;
    std::size_t error_index = n;
    std::mutex guard;
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(guard);
            if (static_cast<std::size_t>(i) < error_index) {
                error_index = static_cast<std::size_t>(i);
                error = std::current_exception();
            }
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace clipos
