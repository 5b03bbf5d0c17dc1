#pragma once

#include <complex>
#include <vector>

namespace tiltfield {

using Complex = std::complex<double>;

/// In-place complex DFT over a row-major array with the given dimensions
/// (slowest axis first). The inverse transform is normalized by the total size.
void fft_inplace(std::vector<Complex>& data, const std::vector<int>& dims, bool inverse);

/// Convenience wrappers for real inputs.
std::vector<Complex> fft_real(const std::vector<double>& data, const std::vector<int>& dims);

}  // namespace tiltfield
