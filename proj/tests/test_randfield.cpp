#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <limits>

#include "eivoplab/randfield.hpp"
#include "eivoplab/spectral.hpp"

namespace sp = eivoplab::spectral;
namespace rf = eivoplab::randfield;

TEST_CASE("smooth samples are band-limited, centered, normalized", "[randfield]") {
  auto g = sp::make_grid(1, 256, 2 * std::numbers::pi);
  rf::SmoothSampler s{g, 8.0, rf::Normalize::unit_l2, 99};
  auto fields = rf::sample_smooth(s, 4);
  REQUIRE(fields.size() == 4);

  for (const auto& f : fields) {
    CHECK(sp::quad_l2_norm(f) == Catch::Approx(1.0).epsilon(1e-12));
    double mean = 0;
    for (double v : f.values) mean += v;
    CHECK(std::abs(mean / 256) < 1e-14);
    // Zero spectral energy above the cutoff.
    sp::Spectrum c = sp::dft(f);
    auto kabs = g->kappa_abs();
    for (std::size_t i = 0; i < c.coeffs.size(); ++i)
      if (kabs[i] > 8.0) CHECK(std::abs(c.coeffs[i]) < 1e-10);
  }

  // Distinct draws differ; same seed reproduces.
  CHECK(fields[0].values != fields[1].values);
  auto again = rf::sample_smooth(s, 4);
  CHECK(again[2].values == fields[2].values);

  rf::SmoothSampler srms{g, 8.0, rf::Normalize::unit_rms, 99};
  auto frms = rf::sample_smooth(srms, 1);
  CHECK(sp::rms(frms[0]) == Catch::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(rf::sample_smooth(s, 0), std::invalid_argument);
  rf::SmoothSampler bad{g, 1e9, rf::Normalize::none, 1};
  CHECK_THROWS_AS(rf::sample_smooth(bad, 1), std::invalid_argument);
}

TEST_CASE("kappa_keep zero yields the zero field", "[randfield]") {
  auto g = sp::make_grid(1, 64, 2 * std::numbers::pi);
  rf::SmoothSampler s{g, 0.0, rf::Normalize::unit_l2, 5};
  auto f = rf::sample_smooth(s, 1);
  for (double v : f[0].values) CHECK(v == 0.0);
}

TEST_CASE("sigma_for_snr matches the dB definition", "[randfield]") {
  auto g = sp::make_grid(1, 8, 1.0);
  sp::Field f(g);
  for (auto& v : f.values) v = 1.0;  // RMS 1
  CHECK(rf::sigma_for_snr(f, 0.0) == Catch::Approx(1.0));
  CHECK(rf::sigma_for_snr(f, 20.0) == Catch::Approx(0.10000000000000001));

  for (auto& v : f.values) v = 2.0;  // RMS 2
  CHECK(rf::sigma_for_snr(f, -4.0) == Catch::Approx(3.1697863849222272).epsilon(1e-12));

  sp::Field z(g);
  CHECK_THROWS_AS(rf::sigma_for_snr(z, 0.0), std::invalid_argument);
}

TEST_CASE("add_white_noise statistics and determinism", "[randfield]") {
  auto g = sp::make_grid(2, 1024, 1.0);  // 2^20 points
  sp::Field f(g);
  const double sigma = 0.7;
  sp::Field noisy = rf::add_white_noise(f, sigma, 1234);
  sp::Field noisy2 = rf::add_white_noise(f, sigma, 1234);
  CHECK(noisy.values == noisy2.values);

  double mean = 0;
  for (std::size_t i = 0; i < noisy.values.size(); ++i) mean += noisy.values[i];
  mean /= static_cast<double>(noisy.values.size());
  double var = 0;
  for (std::size_t i = 0; i < noisy.values.size(); ++i) {
    const double d = noisy.values[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(noisy.values.size());
  CHECK(std::sqrt(var) == Catch::Approx(sigma).epsilon(0.01));
  CHECK(std::abs(mean) < 3 * sigma / std::sqrt(1024.0 * 1024.0));

  sp::Field same = rf::add_white_noise(f, 0.0, 9);
  CHECK(same.values == f.values);
  CHECK_THROWS_AS(rf::add_white_noise(f, -1.0, 9), std::invalid_argument);
}

TEST_CASE("snr round trip", "[randfield]") {
  auto g = sp::make_grid(1, 16384, 2 * std::numbers::pi);
  rf::SmoothSampler s{g, 20.0, rf::Normalize::unit_rms, 31};
  sp::Field f = rf::sample_smooth(s, 1)[0];

  for (double target : {8.0, 0.0, -4.0}) {
    const double sigma = rf::sigma_for_snr(f, target);
    sp::Field noisy = rf::add_white_noise(f, sigma, 404);
    CHECK(rf::empirical_snr(f, noisy) == Catch::Approx(target).margin(0.1));
  }

  CHECK(std::isinf(rf::empirical_snr(f, f)));

  // RMS-1 signal with std-1 noise sits at 0 dB by construction.
  sp::Field unit(g);
  for (auto& v : unit.values) v = 1.0;
  sp::Field n0 = rf::add_white_noise(unit, 1.0, 77);
  CHECK(rf::empirical_snr(unit, n0) == Catch::Approx(0.0).margin(0.1));
}
