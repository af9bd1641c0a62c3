#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "longfoley/metrics.hpp"
#include "longfoley/rng.hpp"

namespace lf::testing {

// Sum of three harmonics of 100 Hz (up to 1 kHz) with random phases, so every
// 10 ms window carries the same energy.
inline AudioBuffer random_tone(double rate, double duration_s, Philox& rng) {
  AudioBuffer a;
  a.sample_rate = rate;
  a.samples.assign(static_cast<std::size_t>(std::llround(rate * duration_s)), 0.0);
  for (int k = 0; k < 3; ++k) {
    const double f = 100.0 * static_cast<double>(1 + rng.next_u32() % 10);
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      a.samples[i] += 0.3 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / rate + phase);
    }
  }
  return a;
}

struct SpliceFixture {
  AudioBuffer stepped;
  AudioBuffer crossfaded;
  SplicePoints splices;
};

// A tone whose gain jumps by a factor in [1.5, 2.5] at every splice, and the
// same tone with each jump replaced by a 50 ms linear crossfade centred on it.
inline SpliceFixture gain_step_fixture(std::uint64_t seed) {
  Philox rng(seed, "fixture/gain-step");
  const double rate = 16000.0;
  const AudioBuffer tone = random_tone(rate, 2.0, rng);
  SpliceFixture f;
  f.splices.times = {0.5, 1.0, 1.5};
  std::vector<double> gains{0.3 + 0.2 * rng.uniform()};
  for (std::size_t i = 0; i < f.splices.times.size(); ++i) {
    const double ratio = 1.5 + rng.uniform();
    gains.push_back(rng.uniform() < 0.5 ? gains.back() * ratio : gains.back() / ratio);
  }
  const double half = 0.025;
  f.stepped = tone;
  f.crossfaded = tone;
  for (std::size_t i = 0; i < tone.samples.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    std::size_t seg = 0;
    while (seg < f.splices.times.size() && t >= f.splices.times[seg]) ++seg;
    f.stepped.samples[i] *= gains[seg];
    double g = gains[seg];
    for (std::size_t s = 0; s < f.splices.times.size(); ++s) {
      const double u = (t - (f.splices.times[s] - half)) / (2.0 * half);
      if (u > 0.0 && u < 1.0) g = (1.0 - u) * gains[s] + u * gains[s + 1];
    }
    f.crossfaded.samples[i] *= g;
  }
  return f;
}

// Independent scalar loop over the splice-energy definition.
inline std::vector<double> splice_delta_oracle(const AudioBuffer& a, const SplicePoints& sp) {
  std::vector<double> out;
  long long n = std::llround(0.010 * a.sample_rate);
  if (n < 1) n = 1;
  for (double t : sp.times) {
    const long long c = std::llround(t * a.sample_rate);
    double pre = 0.0, post = 0.0;
    for (long long k = c - n; k < c; ++k) pre += a.samples[k] * a.samples[k];
    for (long long k = c; k < c + n; ++k) post += a.samples[k] * a.samples[k];
    out.push_back(std::fabs(pre / n - post / n));
  }
  return out;
}

// n values with sample mean `mean` and sample standard deviation `sd` (1/(n-1)).
inline std::vector<double> exact_moments(std::size_t n, double mean, double sd, Philox& rng) {
  std::vector<double> u(n);
  double m = 0.0;
  for (double& v : u) {
    v = rng.normal();
    m += v;
  }
  m /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : u) ss += (v - m) * (v - m);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  for (double& v : u) v = mean + sd * (v - m) / s;
  return u;
}

}  // namespace lf::testing
