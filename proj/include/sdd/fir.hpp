#pragma once

#include <span>
#include <vector>

namespace sdd::fir {

/// Windowed-sinc FIR design with a Hamming window, normalised to unit gain at
/// the centre of the first pass band. `edges_hz` are band edges in ascending
/// order; `pass_zero` selects whether DC lies in a pass band (so two edges
/// with pass_zero=true design a band-stop).
std::vector<double> firwin(int num_taps, std::span<const double> edges_hz, bool pass_zero,
                           double fs);

/// Maximum |H(e^jw)| over `points` frequencies in [0, pi).
double max_magnitude(std::span<const double> taps, int points = 512);

/// |H| at a single frequency.
double magnitude_at(std::span<const double> taps, double freq_hz, double fs);

/// Causal FIR filtering, same length as input (zero initial state).
std::vector<double> lfilter(std::span<const double> taps, std::span<const double> x);

/// Zero-phase forward-backward FIR filtering, same length as input.
std::vector<double> filtfilt(std::span<const double> taps, std::span<const double> x);

/// Full linear convolution.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

}  // namespace sdd::fir
