#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "nsg/error.hpp"
#include "nsg/grid.hpp"
#include "test_util.hpp"

using namespace nsg;
using testutil::rel;

namespace {

BoxDomain line(double L, int m) { return BoxDomain(GroupSpec::euclidean(1), {L}, {m}); }

std::filesystem::path tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "nsg_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("box domain validation") {
  CHECK_THROWS_AS(line(1, 7), InvalidArgument);
  CHECK_THROWS_AS(line(1, 6), InvalidArgument);
  CHECK_THROWS_AS(line(-1, 8), InvalidArgument);
  CHECK_THROWS_AS(BoxDomain(GroupSpec::heisenberg1(), {1, 1}, {8, 8}), InvalidArgument);
  const auto b = BoxDomain::gauge_box(GroupSpec::heisenberg1(), 3, 8);
  CHECK(b.half_widths() == std::vector<double>{3, 3, 9});
  CHECK(b.size() == 512);
  CHECK(b.cell_volume() == doctest::Approx(0.75 * 0.75 * 2.25));
}

TEST_CASE("sample examples") {
  const auto dom = line(1, 8);
  const auto one = sample(dom, [](auto) { return 1.0; });
  for (double v : one.values()) CHECK(v == 1.0);
  const auto g = GroupSpec::euclidean(1);
  const auto q = sample(dom, [&](auto x) { return qnorm(g, x); });
  CHECK(*std::min_element(q.values().begin(), q.values().end()) == 0.125);
  CHECK(lp_norm_pow(one, 1.0) == 2.0);
  CHECK_THROWS_AS(sample(dom, [](auto x) { return 1.0 / (x[0] - 0.125); }), InvalidArgument);
}

TEST_CASE("lp_norm_pow") {
  const auto dom = line(1, 16);
  CHECK(lp_norm_pow(GridFunction::zeros(dom), 2) == 0.0);
  const auto one = sample(dom, [](auto) { return 1.0; });
  for (double p : {1.0, 1.5, 2.0, 3.7}) CHECK(std::abs(lp_norm_pow(one, p) - 2.0) <= 4e-16);
  std::mt19937_64 rng(3);
  const auto u = testutil::random_function(BoxDomain::gauge_box(GroupSpec::heisenberg1(), 2, 8), rng);
  for (double p : {1.0, 1.5, 2.0, 3.0}) {
    CHECK(rel(lp_norm_pow(u.scaled(-2.5), p), std::pow(2.5, p) * lp_norm_pow(u, p)) <= 1e-13);
  }
  CHECK_THROWS_AS(lp_norm_pow(u, 0.5), InvalidArgument);
}

TEST_CASE("holder interpolation on the discrete measure") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0, 1);
  const auto dom = line(3, 64);
  for (int k = 0; k < 200; ++k) {
    const auto u = testutil::random_function(dom, rng);
    const double p = 1 + 4 * U(rng), q = p + 0.1 + 5 * U(rng), a = U(rng);
    const double r = 1.0 / (a / p + (1 - a) / q);
    const double lhs = std::pow(lp_norm_pow(u, r), 1 / r);
    const double rhs = std::pow(lp_norm_pow(u, p), a / p) * std::pow(lp_norm_pow(u, q), (1 - a) / q);
    CHECK(rhs - lhs >= -1e-12);
  }
}

TEST_CASE("entropy examples") {
  const auto unit = line(0.5, 8);
  CHECK(std::abs(entropy_density_integral(sample(unit, [](auto) { return 3.0; }), 2)) < 1e-15);
  const auto dom = line(2, 16);
  CHECK(entropy_density_integral(sample(dom, [](auto) { return -1.5; }), 3) == doctest::Approx(-std::log(4.0)));
  // a on half the box, 0 elsewhere: density 2/V on half, so ∫ρ log ρ = log(2/V).
  const auto two = sample(dom, [](auto x) { return x[0] < 0 ? 0.7 : 0.0; });
  double direct = 0;
  const double total = lp_norm_pow(two, 2);
  for (double v : two.values()) {
    const double rho = v * v / total;
    if (rho > 0) direct += dom.cell_volume() * rho * std::log(rho);
  }
  CHECK(rel(entropy_density_integral(two, 2), std::log(2.0) - std::log(4.0)) < 1e-14);
  CHECK(rel(entropy_density_integral(two, 2), direct) < 1e-14);
  CHECK_THROWS_AS(entropy_density_integral(GridFunction::zeros(dom), 2), InvalidArgument);
}

TEST_CASE("dilate_resample") {
  const auto dom = line(4, 256);
  const auto bump = sample(dom, [](auto x) { return std::exp(-x[0] * x[0]); });
  const auto same = dilate_resample(bump, 1.0, 0.0);
  for (size_t i = 0; i < dom.size(); ++i) CHECK(same[i] == bump[i]);
  for (double p : {1.5, 2.0}) {
    const auto w = dilate_resample(bump, 2.0, 0.0);
    CHECK(std::abs(lp_norm_pow(w, p) / lp_norm_pow(bump, p) - 0.5) <= 1e-3);
  }
  CHECK_THROWS_AS(dilate_resample(bump, 0.0, 0.0), InvalidArgument);

  // On a symmetric cell-centered grid D_3 sends node k to node 3k+1-M.
  std::mt19937_64 rng(9);
  const auto u = testutil::random_function(line(1, 24), rng);
  const auto w = dilate_resample(u, 3.0, 0.5);
  const int m = 24;
  for (int k = 0; k < m; ++k) {
    const int k3 = 3 * k + 1 - m;
    const double expect = (k3 >= 0 && k3 < m) ? std::sqrt(3.0) * u[static_cast<size_t>(k3)] : 0.0;
    CHECK(std::abs(w[static_cast<size_t>(k)] - expect) <= 1e-14);
  }
  // Same on H^1 where D_3 scales t by 9: nodes map to nodes when 9-to-1 on t.
  const auto hdom = BoxDomain(GroupSpec::heisenberg1(), {1, 1, 1}, {8, 8, 8});
  const auto hu = testutil::random_function(hdom, rng);
  const auto hw = dilate_resample(hu, 3.0, 0.0);
  for (size_t i = 0; i < hdom.size(); ++i) {
    const auto x = dilate(hdom.group(), 3.0, hdom.node(i));
    CHECK(std::abs(hw[i] - hu.interpolate(x)) <= 1e-14);
  }
}

TEST_CASE("refine") {
  const auto dom = line(2, 16);
  const auto c = sample(dom, [](auto) { return 2.5; });
  const auto rc = refine(c);
  CHECK(rc.domain().points_per_axis()[0] == 32);
  // Constants are reproduced away from the half cell next to the boundary.
  for (size_t i = 1; i + 1 < rc.size(); ++i) CHECK(rc[i] == 2.5);
  const auto lin = sample(dom, [](auto x) { return 3 * x[0] - 1; });
  const auto rl = refine(lin);
  for (size_t i = 1; i + 1 < rl.size(); ++i) {
    CHECK(std::abs(rl[i] - (3 * rl.domain().node(i)[0] - 1)) <= 1e-14);
  }
  // Gaussian: ‖refine(u)‖ vs ‖u‖ changes like h^2.
  double prev = 0;
  for (int m : {32, 64, 128}) {
    const auto g = sample(line(5, m), [](auto x) { return std::exp(-x[0] * x[0]); });
    const double diff = std::abs(lp_norm_pow(refine(g), 2) - lp_norm_pow(g, 2));
    if (prev > 0) CHECK(diff < 0.35 * prev);
    prev = diff;
  }
}

TEST_CASE("nsgf round trip and errors") {
  std::mt19937_64 rng(21);
  const auto dom = BoxDomain(GroupSpec::heisenberg1(), {1.5, 1.5, 2.25}, {8, 10, 12});
  const auto u = testutil::random_function(dom, rng);
  const auto path = tmp_path("roundtrip.nsgf");
  save(u, path, nlohmann::json{{"note", "x"}});
  nlohmann::json meta;
  const auto v = load(path, &meta);
  CHECK(v.domain() == dom);
  CHECK(std::memcmp(u.values().data(), v.values().data(), u.size() * sizeof(double)) == 0);
  CHECK(meta["note"] == "x");

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [](const std::filesystem::path& p, const std::string& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  const auto bad = tmp_path("bad.nsgf");
  write(bad, bytes.substr(0, bytes.size() - 20));
  CHECK_THROWS_AS(load(bad), FormatError);

  std::string flipped = bytes;
  flipped[flipped.size() - 12] ^= 0x40;
  write(bad, flipped);
  CHECK_THROWS_AS(load(bad), FormatError);

  std::string version = bytes;
  version[4] = 9;
  write(bad, version);
  CHECK_THROWS_AS(load(bad), FormatError);

  // Header claims a different grid than the payload holds.
  const auto small = GridFunction::zeros(BoxDomain(GroupSpec::euclidean(1), {1}, {8}));
  save(small, bad);
  std::string sb;
  {
    std::ifstream in(bad, std::ios::binary);
    sb.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto pos = sb.find("[8]");
  REQUIRE(pos != std::string::npos);
  sb.replace(pos, 3, "[10]");
  // Keep the declared header length consistent with the edited header.
  uint32_t hl = 0;
  std::memcpy(&hl, sb.data() + 8, 4);
  ++hl;
  std::memcpy(sb.data() + 8, &hl, 4);
  write(bad, sb);
  CHECK_THROWS_AS(load(bad), FormatError);

  CHECK_THROWS_AS(load(tmp_path("does_not_exist.nsgf")), FormatError);
}

TEST_CASE("csv export") {
  const auto dom = line(1, 8);
  const auto path = tmp_path("u.csv");
  export_csv(sample(dom, [](auto x) { return x[0]; }), path);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "x0,value");
  CHECK(first.rfind("-0.875", 0) == 0);
}
