// SPDX-License-Identifier: Apache-2.0
#include "nasinv/fft.hpp"

#include <fftw3.h>

#include <mutex>

#include "nasinv/errors.hpp"

namespace nasinv {
namespace {

// FFTW's planner is not thread-safe; execution is. One lock guards all
// plan create/destroy calls. FFTW_ESTIMATE keeps plans deterministic.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> run_dft(
    const std::vector<std::complex<double>>& in, int sign) {
  if (in.empty()) throw EmptyInput("fft: empty input");
  const int n = static_cast<int>(in.size());
  std::vector<std::complex<double>> buf(in);
  std::vector<std::complex<double>> out(in.size());
  auto* src = reinterpret_cast<fftw_complex*>(buf.data());
  auto* dst = reinterpret_cast<fftw_complex*>(out.data());

  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_1d(n, src, dst, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in) {
  return run_dft(in, FFTW_FORWARD);
}

std::vector<std::complex<double>> ifft(const std::vector<std::complex<double>>& in) {
  auto out = run_dft(in, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(in.size());
  for (auto& v : out) v *= scale;
  return out;
}

std::vector<std::complex<double>> fft_real(const std::vector<double>& in) {
  std::vector<std::complex<double>> cx(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) cx[i] = {in[i], 0.0};
  return fft(cx);
}

}  // namespace nasinv
