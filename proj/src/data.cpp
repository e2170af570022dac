#include "diffconv/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace diffconv {

namespace {

// 53-bit uniform in [0, 1).
real_t unit_real(std::mt19937_64& rng) {
  return static_cast<real_t>((rng() >> 11) * 0x1.0p-53);
}

real_t uniform(std::mt19937_64& rng, real_t lo, real_t hi) {
  return lo + (hi - lo) * unit_real(rng);
}

// Box-Muller standard normal.
real_t gaussian(std::mt19937_64& rng) {
  const real_t u1 = real_t(1) - unit_real(rng);  // (0, 1]
  const real_t u2 = unit_real(rng);
  return std::sqrt(real_t(-2) * std::log(u1)) * std::cos(real_t(2) * real_t(3.14159265358979323846) * u2);
}

int uniform_index(std::mt19937_64& rng, int n) {
  return static_cast<int>(rng() % static_cast<std::uint64_t>(n));
}

// ---- line-oriented tokenizer for the text formats -------------------------

struct LineReader {
  std::istream& in;
  int line_no = 0;

  // Next non-blank line split on whitespace; '#' starts a comment. Empty
  // vector means end of stream.
  std::vector<std::string> next(std::vector<std::string>& out) {
    std::string line;
    out.clear();
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) out.push_back(tok);
      if (!out.empty()) return out;
    }
    return out;
  }
};

long long parse_int(const std::string& tok, int line) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "expected an integer, got '" + tok + "'");
  return v;
}

real_t parse_real(const std::string& tok, int line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "expected a number, got '" + tok + "'");
  return static_cast<real_t>(v);
}

void format_real(std::string& out, real_t v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  out += buf;
}

std::array<real_t, 9> random_rotation(std::mt19937_64& rng) {
  // Uniform rotation from a normalized random quaternion.
  real_t q[4];
  real_t norm = 0;
  do {
    norm = 0;
    for (auto& c : q) {
      c = gaussian(rng);
      norm += c * c;
    }
  } while (norm < real_t(1e-12));
  norm = std::sqrt(norm);
  for (auto& c : q) c /= norm;
  const real_t w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

}  // namespace

// ---- OFF -------------------------------------------------------------------

TriangleMesh parse_off(std::istream& in) {
  LineReader reader{in};
  std::vector<std::string> toks;
  reader.next(toks);
  if (toks.empty()) throw ParseError(reader.line_no + 1, "empty stream, expected OFF header");

  long long nv = -1, nf = -1;
  std::size_t count_at = 0;
  if (toks[0] == "OFF") {
    count_at = 1;
  } else if (toks[0].rfind("OFF", 0) == 0) {
    // Fused header: counts begin immediately after the keyword.
    toks[0].erase(0, 3);
    count_at = 0;
  } else {
    throw ParseError(reader.line_no, "expected OFF header, got '" + toks[0] + "'");
  }
  if (count_at == 1 && toks.size() == 1) reader.next(toks), count_at = 0;
  if (toks.size() < count_at + 3) throw ParseError(reader.line_no, "expected vertex/face/edge counts");
  nv = parse_int(toks[count_at], reader.line_no);
  nf = parse_int(toks[count_at + 1], reader.line_no);
  parse_int(toks[count_at + 2], reader.line_no);  // edge count, ignored
  if (nv < 0 || nf < 0) throw ParseError(reader.line_no, "negative element count");

  TriangleMesh mesh;
  mesh.vertices = Matrix(static_cast<int>(nv), 3);
  for (int i = 0; i < nv; ++i) {
    reader.next(toks);
    if (toks.empty()) throw ParseError(reader.line_no + 1, "unexpected end of file in vertex block");
    if (toks.size() < 3) throw ParseError(reader.line_no, "vertex line needs 3 coordinates");
    for (int k = 0; k < 3; ++k) mesh.vertices(i, k) = parse_real(toks[k], reader.line_no);
  }
  for (int f = 0; f < nf; ++f) {
    reader.next(toks);
    if (toks.empty()) throw ParseError(reader.line_no + 1, "unexpected end of file in face block");
    const long long k = parse_int(toks[0], reader.line_no);
    if (k < 3) throw ParseError(reader.line_no, "face needs at least 3 vertices");
    if (static_cast<long long>(toks.size()) < k + 1) throw ParseError(reader.line_no, "face lists fewer vertices than announced");
    std::vector<int> poly(static_cast<std::size_t>(k));
    for (long long t = 0; t < k; ++t) {
      const long long idx = parse_int(toks[static_cast<std::size_t>(t) + 1], reader.line_no);
      if (idx < 0 || idx >= nv) throw ParseError(reader.line_no, "vertex index " + std::to_string(idx) + " out of range");
      poly[static_cast<std::size_t>(t)] = static_cast<int>(idx);
    }
    for (std::size_t t = 1; t + 1 < poly.size(); ++t) mesh.faces.push_back({poly[0], poly[t], poly[t + 1]});
  }
  return mesh;
}

TriangleMesh parse_off_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return parse_off(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + e.what());
  }
}

void write_off(std::ostream& out, const TriangleMesh& mesh) {
  std::string buf = "OFF\n";
  buf += std::to_string(mesh.num_vertices());
  buf += ' ';
  buf += std::to_string(mesh.num_faces());
  buf += " 0\n";
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    for (int k = 0; k < 3; ++k) {
      if (k) buf += ' ';
      format_real(buf, mesh.vertices(i, k));
    }
    buf += '\n';
  }
  for (const auto& f : mesh.faces) {
    buf += "3 ";
    buf += std::to_string(f[0]);
    buf += ' ';
    buf += std::to_string(f[1]);
    buf += ' ';
    buf += std::to_string(f[2]);
    buf += '\n';
  }
  out << buf;
}

void write_off_file(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_off(out, mesh);
  if (!out) throw IoError("write failed: " + path);
}

// ---- sampling and preprocessing ---------------------------------------------

PointCloud sample_surface(const TriangleMesh& mesh, int n, std::uint64_t seed) {
  if (mesh.num_faces() < 1) throw InvalidInput("sample_surface: mesh has no faces");
  if (n < 1) throw InvalidInput("sample_surface: need at least one sample");
  const int nf = mesh.num_faces();
  std::vector<real_t> cum(static_cast<std::size_t>(nf));
  real_t total = 0;
  for (int f = 0; f < nf; ++f) {
    const auto a = mesh.vertices.row(mesh.faces[f][0]);
    const auto b = mesh.vertices.row(mesh.faces[f][1]);
    const auto c = mesh.vertices.row(mesh.faces[f][2]);
    const real_t ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
    const real_t vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
    const real_t cx = uy * vz - uz * vy;
    const real_t cy = uz * vx - ux * vz;
    const real_t cz = ux * vy - uy * vx;
    total += real_t(0.5) * std::sqrt(cx * cx + cy * cy + cz * cz);
    cum[f] = total;
  }
  if (!(total > 0)) throw InvalidInput("sample_surface: zero total surface area");

  std::mt19937_64 rng(seed);
  PointCloud cloud(n);
  for (int i = 0; i < n; ++i) {
    const real_t pick = unit_real(rng) * total;
    const int f = static_cast<int>(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
    const auto& face = mesh.faces[std::min(f, nf - 1)];
    const real_t r1 = unit_real(rng), r2 = unit_real(rng);
    const real_t su = std::sqrt(r1);
    const real_t u = 1 - su, v = su * (1 - r2), w = su * r2;
    for (int k = 0; k < 3; ++k)
      cloud.coords(i, k) = u * mesh.vertices(face[0], k) + v * mesh.vertices(face[1], k) + w * mesh.vertices(face[2], k);
  }
  return cloud;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const int n = cloud.size();
  if (n == 0) throw InvalidInput("normalize_unit_sphere: empty cloud");
  real_t c[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) c[k] += cloud.coords(i, k);
  for (auto& v : c) v /= n;
  PointCloud out(n);
  real_t max_sq = 0;
  for (int i = 0; i < n; ++i) {
    real_t sq = 0;
    for (int k = 0; k < 3; ++k) {
      const real_t d = cloud.coords(i, k) - c[k];
      out.coords(i, k) = d;
      sq += d * d;
    }
    max_sq = std::max(max_sq, sq);
  }
  if (!(max_sq > 0)) throw InvalidInput("normalize_unit_sphere: all points coincide");
  const real_t inv = 1 / std::sqrt(max_sq);
  for (auto& v : out.coords.data) v *= inv;
  return out;
}

PointCloud augment(const PointCloud& cloud, std::uint64_t seed, real_t magnitude) {
  std::mt19937_64 rng(seed);
  const real_t tx = uniform(rng, -magnitude, magnitude);
  const real_t ty = uniform(rng, -magnitude, magnitude);
  const real_t tz = uniform(rng, -magnitude, magnitude);
  const int n = cloud.size();
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  PointCloud out(n);
  for (int i = 0; i < n; ++i) {
    const int src = order[i];
    out.coords(i, 0) = cloud.coords(src, 0) + tx;
    out.coords(i, 1) = cloud.coords(src, 1) + ty;
    out.coords(i, 2) = cloud.coords(src, 2) + tz;
  }
  return out;
}

PointCloud inject_noise(const PointCloud& cloud, int m, std::uint64_t seed) {
  if (m < 0) throw InvalidInput("inject_noise: negative count");
  std::mt19937_64 rng(seed);
  const int n = cloud.size();
  PointCloud out(n + m);
  std::copy(cloud.coords.data.begin(), cloud.coords.data.end(), out.coords.data.begin());
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < 3; ++k) out.coords(n + i, k) = uniform(rng, -1, 1);
  return out;
}

// ---- synthetic shapes --------------------------------------------------------

PointCloud sample_sphere(int n, std::mt19937_64& rng) {
  PointCloud cloud(n);
  for (int i = 0; i < n; ++i) {
    real_t v[3];
    real_t norm = 0;
    do {
      norm = 0;
      for (auto& c : v) {
        c = gaussian(rng);
        norm += c * c;
      }
    } while (norm < real_t(1e-12));
    norm = std::sqrt(norm);
    for (int k = 0; k < 3; ++k) cloud.coords(i, k) = v[k] / norm;
  }
  return cloud;
}

PointCloud sample_cube(int n, std::mt19937_64& rng) {
  PointCloud cloud(n);
  for (int i = 0; i < n; ++i) {
    const int face = uniform_index(rng, 6);
    const int axis = face / 2;
    const real_t sign = (face % 2) ? real_t(1) : real_t(-1);
    cloud.coords(i, axis) = sign;
    cloud.coords(i, (axis + 1) % 3) = uniform(rng, -1, 1);
    cloud.coords(i, (axis + 2) % 3) = uniform(rng, -1, 1);
  }
  return cloud;
}

PointCloud sample_torus(int n, std::mt19937_64& rng) {
  constexpr real_t kTwoPi = real_t(2) * real_t(3.14159265358979323846);
  constexpr real_t R = 1, r = real_t(0.4);
  PointCloud cloud(n);
  for (int i = 0; i < n; ++i) {
    const real_t theta = kTwoPi * unit_real(rng);
    real_t phi = 0;
    // Rejection on the tube angle keeps the surface measure uniform.
    for (;;) {
      phi = kTwoPi * unit_real(rng);
      if (unit_real(rng) * (R + r) <= R + r * std::cos(phi)) break;
    }
    const real_t ring = R + r * std::cos(phi);
    cloud.coords(i, 0) = ring * std::cos(theta);
    cloud.coords(i, 1) = ring * std::sin(theta);
    cloud.coords(i, 2) = r * std::sin(phi);
  }
  return cloud;
}

PointCloud generate_cloud(const std::string& spec) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = spec.find(':', start);
    parts.push_back(spec.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (parts.size() != 4 || parts[0] != "synth")
    throw InvalidInput("generate_cloud: expected synth:<shape>:<points>:<seed>, got '" + spec + "'");
  PointCloud (*sampler)(int, std::mt19937_64&) = nullptr;
  if (parts[1] == "sphere") sampler = sample_sphere;
  else if (parts[1] == "cube") sampler = sample_cube;
  else if (parts[1] == "torus") sampler = sample_torus;
  else throw InvalidInput("generate_cloud: unknown shape '" + parts[1] + "'");
  int points = 0;
  std::uint64_t seed = 0;
  try {
    points = std::stoi(parts[2]);
    seed = std::stoull(parts[3]);
  } catch (const std::exception&) {
    throw InvalidInput("generate_cloud: bad numeric field in '" + spec + "'");
  }
  if (points < 1) throw InvalidInput("generate_cloud: need at least one point");

  std::mt19937_64 rng(seed);
  PointCloud cloud = sampler(points, rng);
  const auto rot = random_rotation(rng);
  const real_t scale = 1 + uniform(rng, real_t(-0.1), real_t(0.1));
  for (int i = 0; i < points; ++i) {
    const real_t x = cloud.coords(i, 0), y = cloud.coords(i, 1), z = cloud.coords(i, 2);
    cloud.coords(i, 0) = scale * (rot[0] * x + rot[1] * y + rot[2] * z);
    cloud.coords(i, 1) = scale * (rot[3] * x + rot[4] * y + rot[5] * z);
    cloud.coords(i, 2) = scale * (rot[6] * x + rot[7] * y + rot[8] * z);
  }
  return cloud;
}

// ---- dataset assembly ---------------------------------------------------------

DatasetSplit resampled_split(std::vector<DatasetEntry> all, std::uint64_t seed) {
  const int n = static_cast<int>(all.size());
  if (n == 0) throw InvalidInput("resampled_split: empty dataset");
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(all[i], all[uniform_index(rng, i + 1)]);
  const int n_test = static_cast<int>(std::llround(0.15 * n));
  const int n_val = static_cast<int>(std::llround(0.15 * n));
  DatasetSplit split;
  split.test.assign(all.begin(), all.begin() + n_test);
  split.val.assign(all.begin() + n_test, all.begin() + n_test + n_val);
  split.train.assign(all.begin() + n_test + n_val, all.end());
  return split;
}

namespace {

std::string synth_spec(int cls, int instance, int n_per_class, int points, std::uint64_t seed) {
  const std::uint64_t inst_seed = derive_seed(seed, static_cast<std::uint64_t>(cls) * n_per_class + instance);
  return std::string("synth:") + kSyntheticClassNames[cls] + ":" + std::to_string(points) + ":" + std::to_string(inst_seed);
}

}  // namespace

DatasetSplit synthetic_dataset(int n_per_class, int points_per_cloud, std::uint64_t seed) {
  if (points_per_cloud < 16) throw InvalidInput("synthetic_dataset: need at least 16 points per cloud");
  if (n_per_class < 1) throw InvalidInput("synthetic_dataset: need at least one instance per class");
  std::vector<DatasetEntry> all;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n_per_class; ++i) all.push_back({synth_spec(c, i, n_per_class, points_per_cloud, seed), c});
  DatasetSplit split = resampled_split(std::move(all), derive_seed(seed, 0x5157));
  split.class_names.assign(kSyntheticClassNames.begin(), kSyntheticClassNames.end());
  return split;
}

LabeledClouds synthetic_clouds(int n_per_class, int points_per_cloud, std::uint64_t seed) {
  if (points_per_cloud < 16) throw InvalidInput("synthetic_clouds: need at least 16 points per cloud");
  LabeledClouds out;
  out.clouds.resize(static_cast<std::size_t>(3) * n_per_class);
  out.labels.resize(out.clouds.size());
#pragma omp parallel for schedule(dynamic)
  for (int idx = 0; idx < 3 * n_per_class; ++idx) {
    const int c = idx / n_per_class;
    const int i = idx % n_per_class;
    out.clouds[idx] = normalize_unit_sphere(generate_cloud(synth_spec(c, i, n_per_class, points_per_cloud, seed)));
    out.labels[idx] = c;
  }
  return out;
}

LabeledClouds materialize(std::span<const DatasetEntry> entries, int points_per_cloud, std::uint64_t seed) {
  LabeledClouds out;
  out.clouds.resize(entries.size());
  out.labels.resize(entries.size());
  std::vector<std::string> errors(entries.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    try {
      const std::string& src = entries[i].source;
      PointCloud raw = src.rfind("synth:", 0) == 0
                           ? generate_cloud(src)
                           : sample_surface(parse_off_file(src), points_per_cloud, derive_seed(seed, i));
      out.clouds[i] = normalize_unit_sphere(raw);
      out.labels[i] = entries[i].label;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError("materialize: " + e);
  return out;
}

// ---- text formats ---------------------------------------------------------------

void write_pcd(std::ostream& out, const PointCloud& cloud, const Matrix& features) {
  const int n = cloud.size();
  const int d = features.cols;
  if (features.rows != 0 && features.rows != n) throw InvalidInput("write_pcd: feature row count mismatch");
  std::string buf = "PCD-TXT v1 " + std::to_string(n) + " " + std::to_string(features.rows == 0 ? 0 : d) + "\n";
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      if (k) buf += ' ';
      format_real(buf, cloud.coords(i, k));
    }
    if (features.rows != 0)
      for (int k = 0; k < d; ++k) {
        buf += ' ';
        format_real(buf, features(i, k));
      }
    buf += '\n';
  }
  out << buf;
}

void write_pcd_file(const std::string& path, const PointCloud& cloud, const Matrix& features) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_pcd(out, cloud, features);
  if (!out) throw IoError("write failed: " + path);
}

std::pair<PointCloud, Matrix> read_pcd(std::istream& in) {
  LineReader reader{in};
  std::vector<std::string> toks;
  reader.next(toks);
  if (toks.size() != 4 || toks[0] != "PCD-TXT" || toks[1] != "v1")
    throw ParseError(std::max(reader.line_no, 1), "expected header 'PCD-TXT v1 N d'");
  const long long n = parse_int(toks[2], reader.line_no);
  const long long d = parse_int(toks[3], reader.line_no);
  if (n < 0 || d < 0) throw ParseError(reader.line_no, "negative count in header");
  PointCloud cloud(static_cast<int>(n));
  Matrix features(static_cast<int>(n), static_cast<int>(d));
  for (int i = 0; i < n; ++i) {
    reader.next(toks);
    if (toks.empty()) throw ParseError(reader.line_no + 1, "unexpected end of file");
    if (static_cast<long long>(toks.size()) != 3 + d)
      throw ParseError(reader.line_no, "expected " + std::to_string(3 + d) + " values per row");
    for (int k = 0; k < 3; ++k) cloud.coords(i, k) = parse_real(toks[k], reader.line_no);
    for (int k = 0; k < d; ++k) features(i, k) = parse_real(toks[3 + k], reader.line_no);
  }
  return {std::move(cloud), std::move(features)};
}

std::pair<PointCloud, Matrix> read_pcd_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return read_pcd(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + e.what());
  }
}

void write_manifest(std::ostream& out, std::span<const std::pair<std::string, std::string>> rows) {
  for (const auto& [path, cls] : rows) out << path << ',' << cls << '\n';
}

std::vector<std::pair<std::string, std::string>> read_manifest(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(line_no, "expected 'path,class'");
    rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return rows;
}

}  // namespace diffconv
