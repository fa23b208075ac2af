#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace drumdiff {

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

// Power spectrum (|X|^2, bins 0..n/2) of a real frame after a Hann window.
std::vector<double> power_spectrum(const double* frame, std::size_t n);

// Triangular mel-spaced filterbank over FFT bins [0, fft_size/2].
// Returned matrix is bands x (fft_size/2 + 1), row-major.
std::vector<double> mel_filterbank(int bands, std::size_t fft_size, double sample_rate,
                                   double fmin, double fmax);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

}  // namespace drumdiff
