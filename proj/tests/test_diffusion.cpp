#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "mdlab/diffusion.hpp"
#include "mdlab/stats.hpp"

using namespace mdlab;

namespace {

MaskedSeq clean(int n, int tok = 1) { return MaskedSeq(std::vector<int>(n, tok)); }

std::vector<std::uint8_t> all_maskable(int n) { return std::vector<std::uint8_t>(n, 1); }

}  // namespace

TEST_CASE("alpha is the linear schedule") {
  CHECK(alpha(0.0) == doctest::Approx(1.0));
  CHECK(alpha(1.0) == doctest::Approx(0.0));
  CHECK(alpha(0.3) == doctest::Approx(0.7));
  CHECK_THROWS(alpha(-0.1));
  CHECK_THROWS(alpha(1.1));
}

TEST_CASE("forward_corrupt endpoints and non-maskable positions") {
  const MaskedSeq x0 = clean(12);
  const auto m = all_maskable(12);
  CHECK(forward_corrupt(x0, m, 0.0, 5) == x0);
  const MaskedSeq full = forward_corrupt(x0, m, 1.0, 5);
  CHECK(full.masked_count() == 12);

  std::vector<std::uint8_t> frozen(12, 0);
  CHECK(forward_corrupt(x0, frozen, 1.0, 5) == x0);

  // Pure in the seed.
  CHECK(forward_corrupt(x0, m, 0.4, 9) == forward_corrupt(x0, m, 0.4, 9));
  CHECK(forward_corrupt(x0, m, 0.4, 9) != forward_corrupt(x0, m, 0.4, 10));
}

TEST_CASE("forward_corrupt empirical mask rate matches t") {
  const MaskedSeq x0 = clean(1);
  const auto m = all_maskable(1);
  const double t = 0.37;
  const int n = 100000;
  int masked = 0;
  for (int s = 0; s < n; ++s) masked += forward_corrupt(x0, m, t, s).masked_count();
  const std::vector<double> obs{static_cast<double>(masked), static_cast<double>(n - masked)};
  const std::vector<double> exp{n * t, n * (1.0 - t)};
  CHECK(chi2_sf(chi2_stat(obs, exp), 1) > 0.01);
}

TEST_CASE("bridge_corrupt identity, monotonicity and argument checks") {
  const MaskedSeq x0 = clean(10);
  const auto m = all_maskable(10);
  const MaskedSeq x_t = forward_corrupt(x0, m, 0.5, 3);
  CHECK(bridge_corrupt(x_t, m, 0.5, 0.0, 11) == x_t);

  const MaskedSeq x_tt = bridge_corrupt(x_t, m, 0.5, 0.3, 11);
  for (std::size_t i = 0; i < x_t.size(); ++i)
    if (x_t.is_masked(i)) CHECK(x_tt.is_masked(i));  // masked positions never return

  CHECK_THROWS(bridge_corrupt(x_t, m, 0.5, 0.6, 1));  // t + t' > 1
  MaskedSeq all_masked(10, kMask);
  CHECK_NOTHROW(bridge_corrupt(all_masked, m, 1.0, 0.0, 1));
  CHECK_THROWS(bridge_corrupt(all_masked, m, 1.0, 0.1, 1));
}

TEST_CASE("bridge keep probability equals (1-t-t')/(1-t)") {
  // t = 0.2, t' = 0.3: an unmasked position survives with 0.5/0.8 = 0.625.
  const MaskedSeq x_t = clean(1);
  const auto m = all_maskable(1);
  const double t = 0.2, tf = 0.3;
  const int n = 100000;
  int kept = 0;
  for (int s = 0; s < n; ++s) kept += bridge_corrupt(x_t, m, t, tf, s).masked_count() == 0;
  const std::vector<double> obs{static_cast<double>(kept), static_cast<double>(n - kept)};
  const std::vector<double> exp{n * 0.625, n * 0.375};
  CHECK(chi2_sf(chi2_stat(obs, exp), 1) > 0.01);
}

TEST_CASE("forward-then-bridge composes to the direct corruption marginal") {
  const MaskedSeq x0 = clean(1);
  const auto m = all_maskable(1);
  const double t = 0.35, tf = 0.25;
  const int n = 100000;
  int masked_composed = 0, masked_direct = 0;
  for (int s = 0; s < n; ++s) {
    const MaskedSeq x_t = forward_corrupt(x0, m, t, hash2(77, s));
    masked_composed += bridge_corrupt(x_t, m, t, tf, hash2(78, s)).masked_count();
    masked_direct += forward_corrupt(x0, m, t + tf, hash2(79, s)).masked_count();
  }
  const std::vector<double> obs{static_cast<double>(masked_composed),
                                static_cast<double>(n - masked_composed)};
  const std::vector<double> exp{n * (t + tf), n * (1.0 - t - tf)};
  CHECK(chi2_sf(chi2_stat(obs, exp), 1) > 0.01);
  // And the two ways agree with each other.
  const std::vector<double> obs2{static_cast<double>(masked_direct),
                                 static_cast<double>(n - masked_direct)};
  CHECK(chi2_sf(chi2_stat(obs2, exp), 1) > 0.01);
}

TEST_CASE("replace substitutes exactly the given positions") {
  MaskedSeq x(std::vector<int>{kMask, 1, kMask, 3});
  MaskedSeq y(std::vector<int>{9, 8, 7, 6});
  const MaskedSeq out = replace(x, y, {0, 2});
  CHECK(out.tokens == std::vector<int>{9, 1, 7, 3});
  CHECK_THROWS(replace(x, y, {4}));
  MaskedSeq y_masked(std::vector<int>{9, kMask, 7, 6});
  CHECK_THROWS(replace(x, y_masked, {0}));
}

TEST_CASE("MaskedSeq helpers") {
  MaskedSeq x(std::vector<int>{kMask, 2, kMask});
  CHECK(x.masked_count() == 2);
  CHECK(x.masked_indices() == std::vector<int>{0, 2});
  CHECK_FALSE(x.fully_unmasked());
  x[0] = 1;
  x[2] = 1;
  CHECK(x.fully_unmasked());
}
