#include "drumdiff/dsp.hpp"

#include <cmath>

#include "drumdiff/common.hpp"

namespace drumdiff {

void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw DrumdiffError("fft: size must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> power_spectrum(const double* frame, std::size_t n) {
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w =
        0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n - 1)));
    buf[i] = frame[i] * w;
  }
  fft_radix2(buf);
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) p[k] = std::norm(buf[k]);
  return p;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int bands, std::size_t fft_size, double sample_rate,
                                   double fmin, double fmax) {
  const std::size_t nbins = fft_size / 2 + 1;
  std::vector<double> fb(static_cast<std::size_t>(bands) * nbins, 0.0);
  const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  std::vector<double> edges(bands + 2);
  for (int i = 0; i < bands + 2; ++i)
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * i / (bands + 1));
  for (int b = 0; b < bands; ++b) {
    const double f0 = edges[b], f1 = edges[b + 1], f2 = edges[b + 2];
    for (std::size_t k = 0; k < nbins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (f >= f0 && f <= f1 && f1 > f0)
        w = (f - f0) / (f1 - f0);
      else if (f > f1 && f <= f2 && f2 > f1)
        w = (f2 - f) / (f2 - f1);
      fb[static_cast<std::size_t>(b) * nbins + k] = w;
    }
  }
  return fb;
}

}  // namespace drumdiff
