#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nmsparse/gumbel.hpp"
#include "nmsparse/serialize.hpp"

using namespace nmsparse;

TEST_CASE("gumbel transform fixed points") {
  // epsilon = 1/e -> g = -log(1) = 0
  CHECK(-std::log(-std::log(1.0 / std::exp(1.0))) == doctest::Approx(0.0).epsilon(1e-12));
  // epsilon = 0.5 -> g = -log(log 2)
  CHECK(-std::log(-std::log(0.5)) == doctest::Approx(0.36651292058166435).epsilon(1e-12));
}

TEST_CASE("empirical gumbel mean approximates Euler-Mascheroni") {
  NoiseSource noise(123);
  const std::size_t n = 1000000;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += noise.gumbel();
  mean /= static_cast<double>(n);
  CHECK(std::fabs(mean - 0.5772156649) < 0.01);
}

TEST_CASE("noise draws stay inside the clamped open interval") {
  NoiseSource noise(7, 1e-10);
  for (int i = 0; i < 10000; ++i) {
    const double u = noise.uniform();
    CHECK(u >= 1e-10);
    CHECK(u <= 1.0 - 1e-10);
  }
  CHECK_THROWS_AS((void)sample_gumbel(noise, 0), ValidationError);
}

TEST_CASE("noise stream is deterministic per seed") {
  NoiseSource a(42), b(42), c(43);
  std::vector<double> va = sample_gumbel(a, 64), vb = sample_gumbel(b, 64),
                      vc = sample_gumbel(c, 64);
  CHECK(va == vb);
  CHECK(va != vc);
}

TEST_CASE("soft_index basics") {
  const std::vector<double> zero_noise(6, 0.0);

  SUBCASE("equal logits, zero noise -> uniform") {
    const std::vector<double> logits(6, 0.3);
    const auto y = soft_index(logits, zero_noise, 1.0, 100.0);
    for (double v : y) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  }

  SUBCASE("sharp limit approaches one-hot") {
    std::vector<double> logits(6, 0.0);
    logits[0] = 1.0;
    const auto y = soft_index(logits, zero_noise, 0.05, 100.0);
    CHECK(y[0] > 1.0 - 1e-9);
  }

  SUBCASE("shift invariance") {
    std::vector<double> logits = {0.3, -0.2, 0.9, 0.05, -1.1, 0.4};
    std::vector<double> noise = {0.5, 1.2, -0.3, 0.0, 2.0, -0.7};
    const auto base = soft_index(logits, noise, 0.7, 37.0);
    std::vector<double> shifted = logits;
    for (double& v : shifted) v += 3.21;
    const auto moved = soft_index(shifted, noise, 0.7, 37.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::fabs(base[i] - moved[i]) <= 1e-12);
  }

  SUBCASE("errors") {
    const std::vector<double> logits(6, 0.0);
    CHECK_THROWS_AS((void)soft_index(logits, zero_noise, 0.0, 100.0), ValidationError);
    CHECK_THROWS_AS((void)soft_index(logits, std::vector<double>(5, 0.0), 1.0, 1.0),
                    ValidationError);
  }
}

TEST_CASE("soft_index sums to one and tau-monotonicity holds under fixed noise") {
  NoiseSource noise(11);
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> logits(6), g(6);
    for (double& v : logits) v = rng.normal(0.0, 0.01);
    for (double& v : g) v = noise.gumbel();
    double prev_max = 0.0;
    bool first = true;
    for (double tau : {4.0, 2.0, 1.0, 0.5, 0.1, 0.05}) {
      const auto y = soft_index(logits, g, tau, 100.0);
      double sum = 0.0;
      for (double v : y) {
        sum += v;
        // open interval mathematically; saturates to {0, 1} in f64 at sharp tau
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
      const double mx = *std::max_element(y.begin(), y.end());
      if (!first) CHECK(mx >= prev_max - 1e-12);
      prev_max = mx;
      first = false;
    }
  }
}

TEST_CASE("differentiable_mask weighted averages") {
  const MaskCandidateSet set = enumerate_candidates(2, 4);

  SUBCASE("one-hot index returns that candidate") {
    std::vector<double> y(6, 0.0);
    y[0] = 1.0;
    const auto m = differentiable_mask(y, set);
    CHECK(m == std::vector<double>{1, 1, 0, 0});
  }

  SUBCASE("uniform index gives 0.5 everywhere (each column holds three ones)") {
    const std::vector<double> y(6, 1.0 / 6.0);
    const auto m = differentiable_mask(y, set);
    for (double v : m) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("average of complementary candidates") {
    std::vector<double> y(6, 0.0);
    y[0] = 0.5;
    y[5] = 0.5;
    const auto m = differentiable_mask(y, set);
    for (double v : m) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("length mismatch") {
    CHECK_THROWS_AS((void)differentiable_mask(std::vector<double>(5, 0.2), set), ValidationError);
  }
}

TEST_CASE("differentiable_mask entries sum to n over random simplex points") {
  const MaskCandidateSet set = enumerate_candidates(2, 4);
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> y(6);
    double sum = 0.0;
    for (double& v : y) {
      v = -std::log(1.0 - rng.uniform());
      sum += v;
    }
    for (double& v : y) v /= sum;
    const auto m = differentiable_mask(y, set);
    double total = 0.0;
    for (double v : m) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
      total += v;
    }
    CHECK(total == doctest::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("probability_from_logits") {
  const std::vector<double> flat(6, 0.1);
  const auto uniform = probability_from_logits(flat, 100.0);
  for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  std::vector<double> logits = {0.02, 0.01, -0.03, 0.0, 0.015, -0.01};
  const auto sharp = probability_from_logits(logits, 1e4);
  CHECK(sharp[0] > 0.999);

  // argmax is preserved for every positive kappa
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(6);
    for (double& v : l) v = rng.normal();
    const int base = argmax_lowest_index(l);
    for (double kappa : {0.01, 1.0, 57.0, 1000.0}) {
      const auto p = probability_from_logits(l, kappa);
      CHECK(argmax_lowest_index(p) == base);
      double sum = 0.0;
      for (double v : p) sum += v;
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("soft_index Jacobian matches central finite differences") {
  Rng rng(31);
  NoiseSource noise(32);
  const double h = 1e-5;
  double max_rel = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(6), g(6);
    for (double& v : logits) v = rng.normal(0.0, 0.02);
    for (double& v : g) v = noise.gumbel();
    const double tau = 0.5 + 3.0 * rng.uniform();
    const double kappa = 10.0 + 100.0 * rng.uniform();
    const auto y = soft_index(logits, g, tau, kappa);
    for (std::size_t j = 0; j < 6; ++j) {  // d y_i / d logit_j
      std::vector<double> lp = logits, lm = logits;
      lp[j] += h;
      lm[j] -= h;
      const auto yp = soft_index(lp, g, tau, kappa);
      const auto ym = soft_index(lm, g, tau, kappa);
      for (std::size_t i = 0; i < 6; ++i) {
        const double fd = (yp[i] - ym[i]) / (2.0 * h);
        const double an = (kappa / tau) * y[i] * ((i == j ? 1.0 : 0.0) - y[j]);
        if (std::fabs(fd - an) > 1e-10)
          max_rel = std::max(max_rel,
                             std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an)}));
      }
    }
  }
  CHECK(max_rel <= 1e-5);
}

TEST_CASE("schedule endpoints and interpolation") {
  GumbelSchedule s;
  s.total_steps = 2000;
  CHECK(s.at(0).first == 4.0);
  CHECK(s.at(0).second == 100.0);
  CHECK(s.at(2000).first == 0.05);
  CHECK(s.at(2000).second == 500.0);
  CHECK(s.at(1000).second == doctest::Approx(300.0).epsilon(1e-12));
  // geometric decay midpoint
  CHECK(s.at(1000).first == doctest::Approx(std::sqrt(4.0 * 0.05)).epsilon(1e-12));

  GumbelSchedule lin = s;
  lin.tau_decay = TauDecay::Linear;
  CHECK(lin.at(1000).first == doctest::Approx((4.0 + 0.05) / 2.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)s.at(-1), ValidationError);
  CHECK_THROWS_AS((void)s.at(2001), ValidationError);

  GumbelSchedule bad = s;
  bad.tau_end = 5.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = s;
  bad.kappa_end = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
