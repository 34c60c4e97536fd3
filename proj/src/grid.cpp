#include "nsg/grid.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "nsg/error.hpp"
#include "nsg/parallel.hpp"

namespace nsg {

using json = nlohmann::json;

BoxDomain::BoxDomain(GroupSpec group, std::vector<double> half_widths, std::vector<int> points_per_axis)
    : group_(std::move(group)), half_widths_(std::move(half_widths)), points_(std::move(points_per_axis)) {
  const size_t n = static_cast<size_t>(group_.dim());
  if (half_widths_.size() != n || points_.size() != n) {
    throw InvalidArgument("box: expected " + std::to_string(n) + " half-widths and point counts");
  }
  spacings_.resize(n);
  strides_.assign(n, 1);
  cell_volume_ = 1.0;
  size_ = 1;
  for (size_t i = 0; i < n; ++i) {
    if (!(half_widths_[i] > 0.0) || !std::isfinite(half_widths_[i])) {
      throw InvalidArgument("box: half-width on axis " + std::to_string(i) + " must be positive");
    }
    if (points_[i] < 8 || points_[i] % 2 != 0) {
      throw InvalidArgument("box: points on axis " + std::to_string(i) + " must be even and >= 8, got " +
                            std::to_string(points_[i]));
    }
    spacings_[i] = 2.0 * half_widths_[i] / points_[i];
    cell_volume_ *= spacings_[i];
    size_ *= static_cast<size_t>(points_[i]);
  }
  for (size_t i = n; i-- > 1;) strides_[i - 1] = strides_[i] * static_cast<size_t>(points_[i]);
}

BoxDomain BoxDomain::gauge_box(const GroupSpec& group, double half_width, int points) {
  std::vector<double> widths;
  for (int r : group.dilation_exponents()) widths.push_back(std::pow(half_width, r));
  return BoxDomain(group, widths, std::vector<int>(static_cast<size_t>(group.dim()), points));
}

double BoxDomain::box_volume() const {
  double v = 1.0;
  for (double l : half_widths_) v *= 2.0 * l;
  return v;
}

GroupPoint BoxDomain::node(size_t index) const {
  GroupPoint x(static_cast<size_t>(dim()));
  for (int a = 0; a < dim(); ++a) {
    const size_t k = (index / strides_[static_cast<size_t>(a)]) % static_cast<size_t>(points_[static_cast<size_t>(a)]);
    x[static_cast<size_t>(a)] = node_coord(a, static_cast<int>(k));
  }
  return x;
}

std::vector<double> BoxDomain::node_table() const {
  const size_t d = static_cast<size_t>(dim());
  std::vector<double> table(size_ * d);
  for (size_t i = 0; i < size_; ++i) {
    const GroupPoint x = node(i);
    std::copy(x.begin(), x.end(), table.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return table;
}

double BoxDomain::max_gauge_radius() const {
  // The gauge is maximized at a corner for both supported groups.
  return qnorm(group_, half_widths_);
}

BoxDomain BoxDomain::refined() const {
  std::vector<int> pts = points_;
  for (int& m : pts) m *= 2;
  return BoxDomain(group_, half_widths_, pts);
}

GridFunction::GridFunction(BoxDomain domain, std::vector<double> values)
    : domain_(std::move(domain)), values_(std::move(values)) {
  if (values_.size() != domain_.size()) {
    throw InvalidArgument("grid function: " + std::to_string(values_.size()) + " values for a grid of " +
                          std::to_string(domain_.size()) + " nodes");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("grid function: non-finite value");
  }
}

GridFunction GridFunction::zeros(BoxDomain domain) {
  const size_t n = domain.size();
  return GridFunction(std::move(domain), std::vector<double>(n, 0.0));
}

GridFunction GridFunction::scaled(double c) const {
  std::vector<double> v(values_);
  for (double& x : v) x *= c;
  return GridFunction(domain_, std::move(v));
}

double GridFunction::interpolate(std::span<const double> point) const {
  const int d = domain_.dim();
  if (static_cast<int>(point.size()) != d) throw InvalidArgument("interpolate: dimension mismatch");
  if (d > 8) throw InvalidArgument("interpolate: at most 8 dimensions are supported");
  // Per axis: lower node index and weight of the upper node.
  int lo[8];
  double frac[8];
  for (int a = 0; a < d; ++a) {
    const size_t ua = static_cast<size_t>(a);
    const double s = (point[ua] + domain_.half_widths()[ua]) / domain_.spacings()[ua] - 0.5;
    const double fl = std::floor(s);
    if (fl < -1.0 || fl > domain_.points_per_axis()[ua] - 1.0) return 0.0;
    lo[a] = static_cast<int>(fl);
    frac[a] = s - fl;
  }
  double acc = 0.0;
  for (int corner = 0; corner < (1 << d); ++corner) {
    double w = 1.0;
    size_t idx = 0;
    bool inside = true;
    for (int a = 0; a < d; ++a) {
      const int bit = (corner >> a) & 1;
      const int k = lo[a] + bit;
      w *= bit ? frac[a] : 1.0 - frac[a];
      if (k < 0 || k >= domain_.points_per_axis()[static_cast<size_t>(a)]) {
        inside = false;
        break;
      }
      idx += static_cast<size_t>(k) * domain_.strides()[static_cast<size_t>(a)];
    }
    if (inside && w != 0.0) acc += w * values_[idx];
  }
  return acc;
}

GridFunction sample(const BoxDomain& domain, const std::function<double(std::span<const double>)>& f) {
  std::vector<double> v(domain.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const GroupPoint x = domain.node(i);
    v[i] = f(x);
    if (!std::isfinite(v[i])) throw InvalidArgument("sample: non-finite value at node " + std::to_string(i));
  }
  return GridFunction(domain, std::move(v));
}

double lp_norm_pow(std::span<const double> values, double cell_volume, double p) {
  if (!(p >= 1.0)) throw InvalidArgument("lp_norm_pow: p must be >= 1");
  const double* v = values.data();
  const double s = chunked_sum(values.size(), [&](size_t b, size_t e) {
    double acc = 0.0;
    if (p == 2.0) {
      for (size_t i = b; i < e; ++i) acc += v[i] * v[i];
    } else {
      for (size_t i = b; i < e; ++i) acc += std::pow(std::abs(v[i]), p);
    }
    return acc;
  });
  return cell_volume * s;
}

double lp_norm_pow(const GridFunction& u, double p) {
  return lp_norm_pow(u.values(), u.domain().cell_volume(), p);
}

double entropy_density_integral(const GridFunction& u, double p) {
  const double norm = lp_norm_pow(u, p);
  if (norm == 0.0) throw InvalidArgument("entropy: u is identically zero");
  const double* v = u.values().data();
  const double s = chunked_sum(u.size(), [&](size_t b, size_t e) {
    double acc = 0.0;
    for (size_t i = b; i < e; ++i) {
      const double rho = std::pow(std::abs(v[i]), p) / norm;
      if (rho > 0.0) acc += rho * std::log(rho);
    }
    return acc;
  });
  return u.domain().cell_volume() * s;
}

GridFunction dilate_resample(const GridFunction& u, double lambda, double amplitude_exponent) {
  if (!(lambda > 0.0)) throw InvalidArgument("dilate_resample: lambda must be positive");
  const BoxDomain& dom = u.domain();
  const double amp = std::pow(lambda, amplitude_exponent);
  std::vector<double> v(dom.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const GroupPoint x = dilate(dom.group(), lambda, dom.node(i));
    v[i] = amp * u.interpolate(x);
  }
  return GridFunction(dom, std::move(v));
}

GridFunction refine(const GridFunction& u) {
  const BoxDomain fine = u.domain().refined();
  std::vector<double> v(fine.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = u.interpolate(fine.node(i));
  return GridFunction(fine, std::move(v));
}

json domain_to_json(const BoxDomain& domain) {
  json j;
  j["group"] = domain.group().name();
  j["dim"] = domain.dim();
  j["half_widths"] = domain.half_widths();
  j["points_per_axis"] = domain.points_per_axis();
  return j;
}

BoxDomain domain_from_json(const json& j) {
  try {
    const std::string g = j.at("group").get<std::string>();
    GroupSpec group = g == "heisenberg1" ? GroupSpec::heisenberg1()
                      : g == "euclidean" ? GroupSpec::euclidean(j.at("dim").get<int>())
                                         : throw FormatError("unknown group '" + g + "'");
    return BoxDomain(group, j.at("half_widths").get<std::vector<double>>(),
                     j.at("points_per_axis").get<std::vector<int>>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad domain description: ") + e.what());
  }
}

namespace {

static_assert(std::endian::native == std::endian::little, "NSGF I/O assumes a little-endian host");

constexpr char kMagic[4] = {'N', 'S', 'G', 'F'};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(std::string("NSGF: truncated ") + what);
  return v;
}

uint32_t crc_of(const std::vector<double>& payload) {
  const auto* bytes = reinterpret_cast<const Bytef*>(payload.data());
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t remaining = payload.size() * sizeof(double);
  while (remaining > 0) {
    const uInt step = static_cast<uInt>(std::min<size_t>(remaining, 1u << 30));
    crc = crc32(crc, bytes, step);
    bytes += step;
    remaining -= step;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

void save(const GridFunction& u, const std::filesystem::path& path) { save(u, path, json()); }

void save(const GridFunction& u, const std::filesystem::path& path, const json& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  json header = domain_to_json(u.domain());
  header["count"] = u.size();
  if (!meta.is_null()) header["meta"] = meta;
  const std::string text = header.dump();
  os.write(kMagic, 4);
  put_u32(os, kNsgfVersion);
  put_u32(os, static_cast<uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const std::vector<double> payload(u.values().begin(), u.values().end());
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
  put_u32(os, crc_of(payload));
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

GridFunction load(const std::filesystem::path& path) { return load(path, nullptr); }

GridFunction load(const std::filesystem::path& path, json* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("NSGF: bad magic bytes");
  const uint32_t version = get_u32(is, "version");
  if (version != kNsgfVersion) {
    throw FormatError("NSGF: unsupported format version " + std::to_string(version));
  }
  const uint32_t header_len = get_u32(is, "header length");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), header_len)) throw FormatError("NSGF: truncated header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("NSGF: header is not valid JSON: ") + e.what());
  }
  BoxDomain domain = domain_from_json(header);
  const size_t count = header.value("count", size_t{0});
  if (count != domain.size()) {
    throw FormatError("NSGF: header declares " + std::to_string(count) + " values but grid has " +
                      std::to_string(domain.size()) + " nodes");
  }
  std::vector<double> payload(count);
  if (!is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw FormatError("NSGF: truncated payload");
  }
  const uint32_t crc = get_u32(is, "checksum");
  if (crc != crc_of(payload)) throw FormatError("NSGF: checksum mismatch");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("NSGF: trailing bytes after checksum");
  if (meta != nullptr) *meta = header.contains("meta") ? header["meta"] : json();
  try {
    return GridFunction(std::move(domain), std::move(payload));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("NSGF: ") + e.what());
  }
}

void export_csv(const GridFunction& u, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  const BoxDomain& dom = u.domain();
  static const char* names3[] = {"x", "y", "t"};
  for (int a = 0; a < dom.dim(); ++a) {
    if (dom.group().kind() == GroupKind::Heisenberg1) {
      os << names3[a] << ',';
    } else {
      os << 'x' << a << ',';
    }
  }
  os << "value\n";
  os.precision(17);
  for (size_t i = 0; i < u.size(); ++i) {
    for (double c : dom.node(i)) os << c << ',';
    os << u[i] << '\n';
  }
}

}  // namespace nsg
