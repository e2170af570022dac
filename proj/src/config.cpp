#include "diffconv/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>

namespace diffconv {

namespace {

std::string trim(std::string s) {
  const auto from = s.find_first_not_of(" \t\r");
  const auto to = s.find_last_not_of(" \t\r");
  if (from == std::string::npos) return {};
  return s.substr(from, to - from + 1);
}

long long to_int(const std::string& v, int line) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError(line, "expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v, int line) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ParseError(line, "expected an unsigned integer, got '" + v + "'");
  return out;
}

real_t to_real(const std::string& v, int line) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError(line, "expected a number, got '" + v + "'");
  return static_cast<real_t>(out);
}

bool to_bool(const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(line, "expected true/false, got '" + v + "'");
}

std::array<int, 4> to_int4(const std::string& v, int line) {
  std::array<int, 4> out{};
  std::size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    const std::size_t comma = v.find(',', start);
    const bool last = i == 3;
    if (last != (comma == std::string::npos)) throw ParseError(line, "expected 4 comma-separated integers");
    out[i] = static_cast<int>(to_int(trim(v.substr(start, comma - start)), line));
    start = comma + 1;
  }
  return out;
}

std::string join4(const std::array<int, 4>& a) {
  std::string s;
  for (int i = 0; i < 4; ++i) {
    if (i) s += ',';
    s += std::to_string(a[i]);
  }
  return s;
}

std::string fmt_real(real_t v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  return buf;
}

void apply(AppConfig& c, const std::string& key, const std::string& value, int line) {
  NetworkConfig& n = c.network;
  TrainConfig& t = c.train;
  if (key == "seed") {
    n.seed = to_u64(value, line);
  } else if (key == "input_points") {
    n.set_input_points(static_cast<int>(to_int(value, line)));
  } else if (key == "stage_widths") {
    n.stage_widths = to_int4(value, line);
  } else if (key == "stage_point_counts") {
    n.stage_point_counts = to_int4(value, line);
  } else if (key == "base_sq_radius") {
    n.base_sq_radius = to_real(value, line);
  } else if (key == "bandwidth") {
    n.bandwidth = to_real(value, line);
  } else if (key == "num_classes") {
    n.num_classes = static_cast<int>(to_int(value, line));
  } else if (key == "head_hidden") {
    n.head_hidden = static_cast<int>(to_int(value, line));
  } else if (key == "dropout") {
    n.dropout = to_real(value, line);
  } else if (key == "laplacian_smoothing") {
    n.laplacian_smoothing = to_bool(value, line);
  } else if (key == "grouping") {
    try {
      n.grouping = grouping_from_string(value);
    } catch (const InvalidInput& e) {
      throw ParseError(line, e.what());
    }
  } else if (key == "attention") {
    try {
      n.attention = attention_from_string(value);
    } catch (const InvalidInput& e) {
      throw ParseError(line, e.what());
    }
  } else if (key == "positional_encoding") {
    n.positional_encoding = to_bool(value, line);
  } else if (key == "balanced_renorm") {
    n.balanced_renorm = to_bool(value, line);
  } else if (key == "knn_k") {
    n.knn_k = static_cast<int>(to_int(value, line));
  } else if (key == "bias_bandwidth") {
    n.bias_bandwidth = to_real(value, line);
  } else if (key == "epochs") {
    t.epochs = static_cast<int>(to_int(value, line));
  } else if (key == "batch_size") {
    t.batch_size = static_cast<int>(to_int(value, line));
  } else if (key == "base_lr") {
    t.optimizer.base_lr = to_real(value, line);
  } else if (key == "min_lr") {
    t.optimizer.min_lr = to_real(value, line);
  } else if (key == "momentum") {
    t.optimizer.momentum = to_real(value, line);
  } else if (key == "cosine_period") {
    t.optimizer.cosine_period = static_cast<int>(to_int(value, line));
  } else if (key == "augment") {
    t.augment = to_bool(value, line);
  } else if (key == "augment_magnitude") {
    t.augment_magnitude = to_real(value, line);
  } else if (key == "train_seed") {
    t.seed = to_u64(value, line);
  } else if (key == "dataset") {
    c.dataset = value;
  } else if (key == "n_per_class") {
    c.n_per_class = static_cast<int>(to_int(value, line));
  } else if (key == "points_per_cloud") {
    c.points_per_cloud = static_cast<int>(to_int(value, line));
  } else if (key == "data_seed") {
    c.data_seed = to_u64(value, line);
  } else if (key == "data_root") {
    c.data_root = value;
  } else {
    throw ParseError(line, "unknown configuration key '" + key + "'");
  }
}

}  // namespace

AppConfig parse_config(std::istream& in) {
  AppConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "empty key");
    apply(cfg, key, value, line_no);
  }
  return cfg;
}

AppConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  try {
    return parse_config(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + e.what());
  }
}

std::string dump_config(const AppConfig& c) {
  const NetworkConfig& n = c.network;
  const TrainConfig& t = c.train;
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) {
    s += k;
    s += " = ";
    s += v;
    s += '\n';
  };
  kv("seed", std::to_string(n.seed));
  kv("input_points", std::to_string(n.input_points));
  kv("stage_widths", join4(n.stage_widths));
  kv("stage_point_counts", join4(n.stage_point_counts));
  kv("base_sq_radius", fmt_real(n.base_sq_radius));
  kv("bandwidth", fmt_real(n.bandwidth));
  kv("num_classes", std::to_string(n.num_classes));
  kv("head_hidden", std::to_string(n.head_hidden));
  kv("dropout", fmt_real(n.dropout));
  kv("laplacian_smoothing", n.laplacian_smoothing ? "true" : "false");
  kv("grouping", to_string(n.grouping));
  kv("attention", to_string(n.attention));
  kv("positional_encoding", n.positional_encoding ? "true" : "false");
  kv("balanced_renorm", n.balanced_renorm ? "true" : "false");
  kv("knn_k", std::to_string(n.knn_k));
  kv("bias_bandwidth", fmt_real(n.bias_bandwidth));
  kv("epochs", std::to_string(t.epochs));
  kv("batch_size", std::to_string(t.batch_size));
  kv("base_lr", fmt_real(t.optimizer.base_lr));
  kv("min_lr", fmt_real(t.optimizer.min_lr));
  kv("momentum", fmt_real(t.optimizer.momentum));
  kv("cosine_period", std::to_string(t.optimizer.cosine_period));
  kv("augment", t.augment ? "true" : "false");
  kv("augment_magnitude", fmt_real(t.augment_magnitude));
  kv("train_seed", std::to_string(t.seed));
  kv("dataset", c.dataset);
  kv("n_per_class", std::to_string(c.n_per_class));
  kv("points_per_cloud", std::to_string(c.points_per_cloud));
  kv("data_seed", std::to_string(c.data_seed));
  kv("data_root", c.data_root);
  return s;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const AppConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(dump_config(cfg))));
  return buf;
}

}  // namespace diffconv
