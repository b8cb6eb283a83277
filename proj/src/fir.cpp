#include "sdd/fir.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <set>
#include <stdexcept>

#include <unsupported/Eigen/FFT>

namespace sdd::fir {
namespace {

constexpr double kPi = 3.14159265358979323846;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

// Smallest 2^a 3^b 5^c >= n with a >= 2, so the real-input FFT path applies.
std::size_t fast_size(std::size_t n) {
  std::size_t best = 4;
  while (best < n) best <<= 1;
  for (std::size_t p5 = 4; p5 < best; p5 *= 5) {
    for (std::size_t p35 = p5; p35 < best; p35 *= 3) {
      std::size_t v = p35;
      while (v < n) v <<= 1;
      best = std::min(best, v);
    }
  }
  return best;
}

// Plans are cached per size inside Eigen::FFT; the cache is dropped once it
// holds too many sizes so memory stays bounded.
Eigen::FFT<double>& fft_engine(std::size_t n) {
  thread_local std::unique_ptr<Eigen::FFT<double>> engine;
  thread_local std::set<std::size_t> sizes;
  if (!engine || (sizes.size() >= 32 && !sizes.contains(n))) {
    engine = std::make_unique<Eigen::FFT<double>>();
    sizes.clear();
  }
  sizes.insert(n);
  return *engine;
}

std::vector<std::complex<double>> forward_fft(std::span<const double> a, std::size_t n_fft) {
  std::vector<double> padded(n_fft, 0.0);
  std::copy(a.begin(), a.end(), padded.begin());
  std::vector<std::complex<double>> out;
  fft_engine(n_fft).fwd(out, padded);
  return out;
}

std::vector<double> inverse_fft(std::vector<std::complex<double>>& spectrum, std::size_t n_fft) {
  std::vector<double> out;
  fft_engine(n_fft).inv(out, spectrum);
  return out;
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  const std::size_t n_out = a.size() + b.size() - 1;
  const std::size_t n_fft = fast_size(n_out);
  auto fa = forward_fft(a, n_fft);
  const auto fb = forward_fft(b, n_fft);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  auto out = inverse_fft(fa, n_fft);
  out.resize(n_out);
  return out;
}

}  // namespace

std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  if (std::min(a.size(), b.size()) > 64) return fft_convolve(a, b);
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

std::vector<double> firwin(int num_taps, std::span<const double> edges_hz, bool pass_zero, double fs) {
  if (num_taps < 1) throw std::invalid_argument("firwin: need at least one tap");
  const double nyq = fs / 2.0;
  // Band edges normalised to Nyquist, including 0 and 1 where implied.
  std::vector<double> bands;
  if (pass_zero) bands.push_back(0.0);
  for (double e : edges_hz) bands.push_back(e / nyq);
  if (bands.size() % 2 != 0) bands.push_back(1.0);

  const double centre = 0.5 * (num_taps - 1);
  std::vector<double> h(static_cast<std::size_t>(num_taps), 0.0);
  for (int n = 0; n < num_taps; ++n) {
    const double m = n - centre;
    double v = 0.0;
    for (std::size_t b = 0; b + 1 < bands.size(); b += 2) {
      v += bands[b + 1] * sinc(bands[b + 1] * m) - bands[b] * sinc(bands[b] * m);
    }
    const double window =
        num_taps == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * kPi * n / (num_taps - 1));
    h[static_cast<std::size_t>(n)] = v * window;
  }

  // Unit gain at DC if it passes, else at Nyquist or the first band centre.
  double scale_freq = 0.0;
  if (bands[0] != 0.0) scale_freq = bands[1] == 1.0 ? 1.0 : 0.5 * (bands[0] + bands[1]);
  std::complex<double> resp = 0.0;
  for (int n = 0; n < num_taps; ++n) {
    resp += h[static_cast<std::size_t>(n)] * std::cos(kPi * (n - centre) * scale_freq);
  }
  const double s = resp.real();
  for (double& v : h) v /= s;
  return h;
}

double magnitude_at(std::span<const double> taps, double freq_hz, double fs) {
  const double w = 2.0 * kPi * freq_hz / fs;
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < taps.size(); ++n) {
    acc += taps[n] * std::polar(1.0, -w * static_cast<double>(n));
  }
  return std::abs(acc);
}

double max_magnitude(std::span<const double> taps, int points) {
  // Folding the taps modulo the FFT size samples the DTFT exactly at
  // w = pi * k / points.
  const auto n_fft = static_cast<std::size_t>(2 * points);
  std::vector<double> folded(n_fft, 0.0);
  for (std::size_t n = 0; n < taps.size(); ++n) folded[n % n_fft] += taps[n];
  std::vector<std::complex<double>> spectrum;
  fft_engine(n_fft).fwd(spectrum, folded);
  double best = 0.0;
  for (int k = 0; k < points; ++k) best = std::max(best, std::abs(spectrum[static_cast<std::size_t>(k)]));
  return best;
}

std::vector<double> lfilter(std::span<const double> taps, std::span<const double> x) {
  auto full = convolve(taps, x);
  full.resize(x.size());
  return full;
}

std::vector<double> filtfilt(std::span<const double> taps, std::span<const double> x) {
  if (x.empty()) return {};
  // Odd reflection at both ends suppresses start-up transients.
  const std::size_t pad = std::min(3 * (taps.size() - 1), x.size() - 1);
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  const std::size_t last = x.size() - 1;
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[last] - x[last - i]);

  // Forward then backward pass == circular convolution with the
  // autocorrelation of the taps, i.e. multiplication by |H|^2; the transform
  // is long enough that no wrapped term reaches the kept samples.
  const std::size_t n_fft = fast_size(ext.size() + taps.size() - 1);
  auto spectrum = forward_fft(ext, n_fft);
  const auto h = forward_fft(taps, n_fft);
  for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= std::norm(h[i]);
  const auto y = inverse_fft(spectrum, n_fft);
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + x.size())};
}

}  // namespace sdd::fir
