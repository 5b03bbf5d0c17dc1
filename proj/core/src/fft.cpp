#include "tiltfield/fft.hpp"

#include <functional>
#include <mutex>
#include <numeric>

#include <fftw3.h>

#include "tiltfield/error.hpp"

namespace tiltfield {

namespace {

// FFTW planning is not thread-safe; execution of a plan on new arrays is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

void fft_inplace(std::vector<Complex>& data, const std::vector<int>& dims, bool inverse) {
    const std::size_t total =
        std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<std::size_t>());
    if (dims.empty() || total != data.size()) {
        throw ShapeMismatch("fft dimensions do not match the data size");
    }
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan = fftw_plan_dft(static_cast<int>(dims.size()), dims.data(), ptr, ptr,
                             inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    }
    if (plan == nullptr) {
        throw Error("fftw could not create a plan");
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(total);
        for (auto& v : data) {
            v *= scale;
        }
    }
}

std::vector<Complex> fft_real(const std::vector<double>& data, const std::vector<int>& dims) {
    std::vector<Complex> out(data.begin(), data.end());
    fft_inplace(out, dims, false);
    return out;
}

}  // namespace tiltfield
