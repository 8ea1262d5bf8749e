#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mdlab/stats.hpp"

using namespace mdlab;

TEST_CASE("mean and sample std on hand values") {
  CHECK(mean_of({2.0, 4.0, 6.0}) == doctest::Approx(4.0));
  // Sample variance of {2,4,6} is ((-2)^2 + 0 + 2^2)/2 = 4.
  CHECK(sample_std({2.0, 4.0, 6.0}) == doctest::Approx(2.0));
  CHECK(sample_std({5.0}) == doctest::Approx(0.0));
}

TEST_CASE("chi-squared survival function matches table values") {
  // Classic 5% / 1% critical values.
  CHECK(chi2_sf(3.841, 1) == doctest::Approx(0.05).epsilon(1e-2));
  CHECK(chi2_sf(5.991, 2) == doctest::Approx(0.05).epsilon(1e-2));
  CHECK(chi2_sf(6.635, 1) == doctest::Approx(0.01).epsilon(1e-2));
  // dof = 2 has the closed form exp(-x/2).
  for (double x : {0.5, 1.0, 3.0, 10.0})
    CHECK(chi2_sf(x, 2) == doctest::Approx(std::exp(-x / 2)).epsilon(1e-10));
  CHECK(chi2_sf(0.0, 5) == doctest::Approx(1.0));
}

TEST_CASE("gamma_q endpoints and the exponential special case") {
  CHECK(gamma_q(1.0, 0.0) == doctest::Approx(1.0));
  // Q(1, x) = exp(-x).
  for (double x : {0.1, 1.0, 4.0}) CHECK(gamma_q(1.0, x) == doctest::Approx(std::exp(-x)));
}

TEST_CASE("chi2_stat on a hand-computed table") {
  // observed {8, 12}, expected {10, 10} -> 4/10 + 4/10 = 0.8
  CHECK(chi2_stat({8.0, 12.0}, {10.0, 10.0}) == doctest::Approx(0.8));
}

TEST_CASE("auc matches hand-computed rank statistics") {
  // Perfect separation.
  CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  // Perfectly wrong.
  CHECK(auc({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  // One inversion among 2x2: pairs = 4, concordant 3, discordant 1 -> 0.75.
  CHECK(auc({0.3, 0.7, 0.5, 0.9}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  // All scores tied -> 0.5 by midranks.
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  // Degenerate single-class input -> 0.5 by convention.
  CHECK(auc({0.1, 0.9}, {1, 1}) == doctest::Approx(0.5));
}
