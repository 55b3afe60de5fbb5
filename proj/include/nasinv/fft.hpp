// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <vector>

namespace nasinv {

// Complex DFT / inverse DFT of arbitrary length. The inverse is scaled by
// 1/N so ifft(fft(x)) == x. Thread-safe: planner access is serialized
// internally, so concurrent calls on disjoint data are fine.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in);
std::vector<std::complex<double>> ifft(const std::vector<std::complex<double>>& in);

// DFT of a real signal, full-length complex output.
std::vector<std::complex<double>> fft_real(const std::vector<double>& in);

}  // namespace nasinv
