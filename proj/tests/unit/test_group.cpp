#include <cmath>
#include <random>

#include "doctest.h"
#include "nsg/error.hpp"
#include "nsg/group.hpp"
#include "test_util.hpp"

using namespace nsg;
using testutil::rel;

namespace {

GroupPoint rand_point(std::mt19937_64& rng, int d, double scale = 3.0) {
  std::uniform_real_distribution<double> U(-scale, scale);
  GroupPoint a(static_cast<size_t>(d));
  for (auto& x : a) x = U(rng);
  return a;
}

void check_close(const GroupPoint& a, const GroupPoint& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("group specs") {
  const auto h = GroupSpec::heisenberg1();
  CHECK(h.dim() == 3);
  CHECK(h.homogeneous_dim() == 4);
  CHECK(h.dilation_exponents() == std::vector<int>{1, 1, 2});
  const auto e = GroupSpec::euclidean(3);
  CHECK(e.homogeneous_dim() == 3);
  CHECK(e.dilation_exponents() == std::vector<int>{1, 1, 1});
  CHECK_THROWS_AS(GroupSpec::euclidean(0), InvalidArgument);
}

TEST_CASE("compose examples") {
  const auto h = GroupSpec::heisenberg1();
  check_close(compose(h, GroupPoint{1, 0, 0}, GroupPoint{0, 1, 0}), {1, 1, 0.5}, 0);
  check_close(compose(GroupSpec::euclidean(2), GroupPoint{1, 2}, GroupPoint{3, 4}), {4, 6}, 0);
  const GroupPoint a{0.3, -1.2, 7};
  check_close(compose(h, a, identity(h)), a, 0);
  CHECK_THROWS_AS(compose(h, GroupPoint{1, 2}, a), InvalidArgument);
}

TEST_CASE("inverse examples") {
  const auto h = GroupSpec::heisenberg1();
  check_close(inverse(h, GroupPoint{1, 2, 3}), {-1, -2, -3}, 0);
  check_close(inverse(GroupSpec::euclidean(1), GroupPoint{5}), {-5}, 0);
  check_close(compose(h, GroupPoint{1, 2, 3}, inverse(h, GroupPoint{1, 2, 3})), {0, 0, 0}, 0);
}

TEST_CASE("dilate examples") {
  const auto h = GroupSpec::heisenberg1();
  check_close(dilate(h, 2, GroupPoint{1, 1, 1}), {2, 2, 4}, 0);
  const GroupPoint a{0.4, -2, 1.5};
  check_close(dilate(h, 1, a), a, 0);
  check_close(dilate(GroupSpec::euclidean(3), 3, GroupPoint{1, 0, -1}), {3, 0, -3}, 0);
  CHECK_THROWS_AS(dilate(h, 0.0, a), InvalidArgument);
  CHECK_THROWS_AS(dilate(h, -1.0, a), InvalidArgument);
}

TEST_CASE("qnorm and dist examples") {
  const auto h = GroupSpec::heisenberg1();
  CHECK(qnorm(h, GroupPoint{1, 0, 0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(qnorm(h, GroupPoint{0, 0, 1}) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(rel(qnorm(h, dilate(h, 3, GroupPoint{1, 1, 1})), 3 * qnorm(h, GroupPoint{1, 1, 1})) < 1e-14);
  CHECK(dist(h, GroupPoint{1, 2, 3}, GroupPoint{1, 2, 3}) == 0.0);
  CHECK(dist(GroupSpec::euclidean(1), GroupPoint{4}, GroupPoint{1}) == 3.0);
}

TEST_CASE("group law properties") {
  std::mt19937_64 rng(11);
  const auto h = GroupSpec::heisenberg1();
  for (int k = 0; k < 1000; ++k) {
    const auto a = rand_point(rng, 3), b = rand_point(rng, 3), c = rand_point(rng, 3);
    check_close(compose(h, compose(h, a, b), c), compose(h, a, compose(h, b, c)), 1e-14 * 16);
    const double na = qnorm(h, a);
    CHECK(std::abs(qnorm(h, inverse(h, a)) - na) <= 2 * std::numeric_limits<double>::epsilon() * na);
    for (double lam : {0.1, 1.0, 2.0, 17.0}) CHECK(rel(qnorm(h, dilate(h, lam, a)), lam * na) <= 1e-12);
    const double lam = 0.5 + k * 1e-3, mu = 1.7;
    const auto lhs = dilate(h, lam, dilate(h, mu, a)), rhs = dilate(h, lam * mu, a);
    for (size_t i = 0; i < 3; ++i) CHECK(rel(lhs[i], rhs[i]) <= 1e-13);
    const auto g = rand_point(rng, 3);
    CHECK(rel(dist(h, compose(h, g, a), compose(h, g, b)), dist(h, a, b)) <= 1e-12);
    CHECK(rel(dist(h, a, b), qnorm(h, compose(h, inverse(h, b), a))) <= 1e-14);
    CHECK(rel(dist_unchecked(GroupKind::Heisenberg1, 3, a.data(), b.data()), dist(h, a, b)) <= 1e-14);
  }
}

TEST_CASE("heisenberg ball volume scales like r^Q") {
  // Grid count of nodes inside B(0, r) on a box scaled with the dilations.
  const auto h = GroupSpec::heisenberg1();
  std::vector<double> logs_r, logs_v;
  for (double r : {0.5, 1.0, 2.0, 4.0}) {
    const int m = 96;
    const double lx = 1.05 * r, lt = 0.26 * r * r;
    const double hx = 2 * lx / m, ht = 2 * lt / m;
    long count = 0;
    GroupPoint z(3);
    for (int i = 0; i < m; ++i) {
      z[0] = -lx + (i + 0.5) * hx;
      for (int j = 0; j < m; ++j) {
        z[1] = -lx + (j + 0.5) * hx;
        for (int k = 0; k < m; ++k) {
          z[2] = -lt + (k + 0.5) * ht;
          if (qnorm(h, z) < r) ++count;
        }
      }
    }
    logs_r.push_back(std::log(r));
    logs_v.push_back(std::log(count * hx * hx * ht));
  }
  double mr = 0, mv = 0;
  for (size_t i = 0; i < logs_r.size(); ++i) mr += logs_r[i] / 4, mv += logs_v[i] / 4;
  double num = 0, den = 0;
  for (size_t i = 0; i < logs_r.size(); ++i) {
    num += (logs_r[i] - mr) * (logs_v[i] - mv);
    den += (logs_r[i] - mr) * (logs_r[i] - mr);
  }
  const double slope = num / den;
  CHECK(std::abs(slope - 4.0) <= 0.04);
  // Unit ball volume π²/8.
  CHECK(std::exp(mv - 4 * mr) == doctest::Approx(M_PI * M_PI / 8).epsilon(0.01));
}
