#include "diffconv/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffconv/attention.hpp"
#include "diffconv/config.hpp"
#include "diffconv/conv.hpp"
#include "diffconv/data.hpp"
#include "diffconv/grouping.hpp"
#include "diffconv/network.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace diffconv {

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitParse = 3;
constexpr int kExitIo = 4;

double elapsed_ms(std::chrono::steady_clock::time_point from) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - from).count();
}

std::string fmt_real(real_t v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  return buf;
}

// The shared context resolved from global flags before a subcommand runs.
struct RunContext {
  AppConfig config;
  std::string out_dir = ".";
  std::string data_root_env;
  std::vector<std::string> outputs;
  json metrics = json::object();
  json extra = json::object();
};

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

json config_as_json(const AppConfig& cfg) {
  // Derived from the canonical dump so the report and the hash always agree.
  json obj = json::object();
  std::istringstream in(dump_config(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    obj[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return obj;
}

void write_report(RunContext& ctx, const std::string& command) {
  json report;
  report["version"] = std::string(kVersion);
  report["command"] = command;
  report["seed"] = ctx.config.network.seed;
  report["config_hash"] = config_hash(ctx.config);
  report["config"] = config_as_json(ctx.config);
  report["data_root_env"] = ctx.data_root_env;
  report["metrics"] = ctx.metrics;
  if (!ctx.extra.empty()) report["details"] = ctx.extra;
  report["outputs"] = ctx.outputs;
  const std::string path = ctx.out_dir + "/report.json";
  write_text(path, report.dump(2) + "\n");
  std::cout << "report: " << path << "\n";
}

std::string resolve_path(const RunContext& ctx, const std::string& src) {
  if (std::filesystem::exists(src)) return src;
  const std::string& root = !ctx.config.data_root.empty() ? ctx.config.data_root : ctx.data_root_env;
  if (!root.empty()) {
    const std::string joined = root + "/" + src;
    if (std::filesystem::exists(joined)) return joined;
  }
  return src;  // let the reader produce the I/O error
}

// Accepts a generator spec, an OFF mesh (surface-sampled), or a PCD-TXT file.
PointCloud load_cloud(const RunContext& ctx, const std::string& src, int points, std::uint64_t seed) {
  if (src.rfind("synth:", 0) == 0) return generate_cloud(src);
  const std::string path = resolve_path(ctx, src);
  if (path.size() > 4 && path.substr(path.size() - 4) == ".off")
    return sample_surface(parse_off_file(path), points, seed);
  return read_pcd_file(path).first;
}

// ---- dataset assembly shared by train/eval/noise-bench ----------------------

struct MaterializedDataset {
  LabeledClouds train, val, test;
  std::vector<std::string> class_names;
};

MaterializedDataset build_dataset(const RunContext& ctx) {
  const AppConfig& cfg = ctx.config;
  DatasetSplit split;
  if (cfg.dataset == "synth") {
    split = synthetic_dataset(cfg.n_per_class, cfg.points_per_cloud, cfg.data_seed);
  } else {
    const std::string manifest_path = resolve_path(ctx, cfg.dataset);
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path);
    const auto rows = read_manifest(in);
    if (rows.empty()) throw InvalidInput("manifest " + manifest_path + " is empty");
    std::set<std::string> names;
    for (const auto& [path, cls] : rows) names.insert(cls);
    std::vector<std::string> class_names(names.begin(), names.end());
    std::vector<DatasetEntry> entries;
    for (const auto& [path, cls] : rows) {
      const int label = static_cast<int>(std::lower_bound(class_names.begin(), class_names.end(), cls) -
                                         class_names.begin());
      entries.push_back({resolve_path(ctx, path), label});
    }
    split = resampled_split(std::move(entries), cfg.data_seed);
    split.class_names = std::move(class_names);
  }
  MaterializedDataset out;
  out.class_names = split.class_names;
  out.train = materialize(split.train, cfg.points_per_cloud, derive_seed(cfg.data_seed, 101));
  if (!split.val.empty()) out.val = materialize(split.val, cfg.points_per_cloud, derive_seed(cfg.data_seed, 102));
  if (!split.test.empty()) out.test = materialize(split.test, cfg.points_per_cloud, derive_seed(cfg.data_seed, 103));
  return out;
}

// ---- subcommands -------------------------------------------------------------

void cmd_density(RunContext& ctx, const std::string& input, int points) {
  const AppConfig& cfg = ctx.config;
  const PointCloud cloud = load_cloud(ctx, input, points, derive_seed(cfg.data_seed, 11));
  const DilationField field = dilation_field(cloud, cfg.network.bandwidth, cfg.network.base_sq_radius);

  std::string csv = "x,y,z,density,normalized_density,dilated_radius\n";
  for (int i = 0; i < cloud.size(); ++i) {
    csv += fmt_real(cloud.coords(i, 0)) + "," + fmt_real(cloud.coords(i, 1)) + "," + fmt_real(cloud.coords(i, 2));
    csv += "," + fmt_real(field.density[i]) + "," + fmt_real(field.normalized_density[i]) + "," +
           fmt_real(field.radii[i]) + "\n";
  }
  const std::string path = ctx.out_dir + "/density.csv";
  write_text(path, csv);
  ctx.outputs.push_back(path);
  ctx.metrics["points"] = cloud.size();
  ctx.metrics["bandwidth"] = cfg.network.bandwidth;
  ctx.metrics["base_sq_radius"] = cfg.network.base_sq_radius;
  std::cout << "density: " << cloud.size() << " points -> " << path << "\n";
}

// Fraction of directed edges (i, j), i != j, whose reverse edge is absent.
double directedness_rate(const SparseDirectedGraph& g) {
  long long considered = 0, one_way = 0;
  for (int i = 0; i < g.num_rows(); ++i)
    for (const int j : g.row(i)) {
      if (j == i) continue;
      ++considered;
      const auto row = g.row(j);
      if (!std::binary_search(row.begin(), row.end(), i)) ++one_way;
    }
  return considered ? static_cast<double>(one_way) / static_cast<double>(considered) : 0.0;
}

void cmd_group(RunContext& ctx, const std::string& input, const std::string& strategy, int points, real_t radius,
               int k) {
  const AppConfig& cfg = ctx.config;
  const PointCloud cloud = load_cloud(ctx, input, points, derive_seed(cfg.data_seed, 12));
  const int n = cloud.size();

  SparseDirectedGraph g;
  std::vector<real_t> radii(static_cast<std::size_t>(n), radius);
  if (strategy == "dilated") {
    const DilationField field = dilation_field(cloud, cfg.network.bandwidth, cfg.network.base_sq_radius);
    radii = field.radii;
    g = ball_query(cloud, cloud, radii);
  } else if (strategy == "ball") {
    g = ball_query(cloud, cloud, radius);
  } else if (strategy == "knn") {
    if (k > n) throw InvalidInput("group: k exceeds the point count");
    g = knn_query(cloud, cloud, k);
    for (int i = 0; i < n; ++i) {
      real_t worst = 0;
      for (const int j : g.row(i)) worst = std::max(worst, sq_dist3(cloud.point(i), cloud.point(j)));
      radii[i] = std::sqrt(worst);
    }
  } else {
    throw InvalidInput("group: unknown strategy '" + strategy + "' (dilated|ball|knn)");
  }

  std::string csv = "key,x,y,z,neighbor_count,radius\n";
  long long total_edges = 0;
  int min_deg = n ? g.row_offsets[1] - g.row_offsets[0] : 0, max_deg = 0;
  for (int i = 0; i < n; ++i) {
    const int deg = g.row_offsets[i + 1] - g.row_offsets[i];
    total_edges += deg;
    min_deg = std::min(min_deg, deg);
    max_deg = std::max(max_deg, deg);
    csv += std::to_string(i) + "," + fmt_real(cloud.coords(i, 0)) + "," + fmt_real(cloud.coords(i, 1)) + "," +
           fmt_real(cloud.coords(i, 2)) + "," + std::to_string(deg) + "," + fmt_real(radii[i]) + "\n";
  }
  const std::string path = ctx.out_dir + "/groups.csv";
  write_text(path, csv);
  ctx.outputs.push_back(path);

  const double rate = directedness_rate(g);
  ctx.metrics["strategy"] = strategy;
  ctx.metrics["points"] = n;
  ctx.metrics["edges"] = total_edges;
  ctx.metrics["min_neighbors"] = min_deg;
  ctx.metrics["max_neighbors"] = max_deg;
  ctx.metrics["mean_neighbors"] = n ? static_cast<double>(total_edges) / n : 0.0;
  ctx.metrics["directedness_rate"] = rate;
  std::cout << "group: " << strategy << ", " << total_edges << " edges, directedness rate " << rate << " -> " << path
            << "\n";
}

void run_training(RunContext& ctx, const std::string& command) {
  const AppConfig& cfg = ctx.config;
  const MaterializedDataset data = build_dataset(ctx);
  Model model(cfg.network);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult tr = train_loop(model, data.train, data.val, cfg.train);
  const double train_ms = elapsed_ms(t0);

  std::string csv = "epoch,loss,lr,train_oa,val_oa\n";
  for (const EpochMetrics& m : tr.history)
    csv += std::to_string(m.epoch) + "," + fmt_real(m.loss) + "," + fmt_real(m.lr) + "," + fmt_real(m.train_oa) +
           "," + fmt_real(m.val_oa) + "\n";
  const std::string metrics_path = ctx.out_dir + "/metrics.csv";
  write_text(metrics_path, csv);
  ctx.outputs.push_back(metrics_path);

  const std::string ckpt_path = ctx.out_dir + "/model.ckpt";
  std::vector<Parameter*> params = model.parameters();
  save_checkpoint(ckpt_path, params);
  ctx.outputs.push_back(ckpt_path);

  ctx.metrics["epochs"] = tr.history.size();
  ctx.metrics["train_ms"] = train_ms;
  if (!tr.history.empty()) {
    ctx.metrics["final_loss"] = tr.history.back().loss;
    ctx.metrics["final_train_oa"] = tr.history.back().train_oa;
    if (data.val.size() > 0) ctx.metrics["final_val_oa"] = tr.history.back().val_oa;
  }
  if (data.test.size() > 0) {
    const EvalResult ev = evaluate(model, data.test);
    ctx.metrics["test_oa"] = ev.oa;
    ctx.metrics["test_ma"] = ev.ma;
    for (const auto& w : ev.warnings) ctx.extra["warnings"].push_back(w);
    std::cout << command << ": test OA " << ev.oa << ", MA " << ev.ma << "\n";
  }
  for (const auto& w : tr.warnings) ctx.extra["warnings"].push_back(w);
  std::cout << command << ": " << tr.history.size() << " epochs in " << train_ms / 1000.0 << " s, checkpoint "
            << ckpt_path << "\n";
}

void cmd_eval(RunContext& ctx, const std::string& checkpoint) {
  const AppConfig& cfg = ctx.config;
  const MaterializedDataset data = build_dataset(ctx);
  const LabeledClouds& eval_set = data.test.size() > 0 ? data.test : data.train;
  Model model(cfg.network);
  std::vector<Parameter*> params = model.parameters();
  load_checkpoint(checkpoint, params);
  const EvalResult ev = evaluate(model, eval_set);
  ctx.metrics["oa"] = ev.oa;
  ctx.metrics["ma"] = ev.ma;
  ctx.metrics["clouds"] = eval_set.size();
  json per_class = json::array();
  for (const real_t a : ev.per_class_accuracy)
    per_class.push_back(std::isnan(static_cast<double>(a)) ? json() : json(a));
  ctx.extra["per_class_accuracy"] = per_class;
  for (const auto& w : ev.warnings) ctx.extra["warnings"].push_back(w);
  std::cout << "eval: OA " << ev.oa << ", MA " << ev.ma << " over " << eval_set.size() << " clouds\n";
}

void cmd_noise_bench(RunContext& ctx, const std::string& checkpoint, const std::vector<int>& levels) {
  const AppConfig& cfg = ctx.config;
  const MaterializedDataset data = build_dataset(ctx);
  const LabeledClouds& base = data.test.size() > 0 ? data.test : data.train;
  Model model(cfg.network);
  std::vector<Parameter*> params = model.parameters();
  load_checkpoint(checkpoint, params);

  std::string csv = "noise_count,oa\n";
  json rows = json::array();
  for (const int level : levels) {
    if (level < 0) throw InvalidInput("noise-bench: negative noise level");
    LabeledClouds noisy;
    noisy.labels = base.labels;
    noisy.clouds.reserve(base.clouds.size());
    for (int i = 0; i < base.size(); ++i)
      noisy.clouds.push_back(
          inject_noise(base.clouds[i], level, derive_seed(cfg.data_seed, 0xA0000u + static_cast<std::uint64_t>(i))));
    const EvalResult ev = evaluate(model, noisy);
    csv += std::to_string(level) + "," + fmt_real(ev.oa) + "\n";
    rows.push_back({{"noise_count", level}, {"oa", ev.oa}});
    std::cout << "noise-bench: " << level << " noise points -> OA " << ev.oa << "\n";
  }
  const std::string path = ctx.out_dir + "/noise_bench.csv";
  write_text(path, csv);
  ctx.outputs.push_back(path);
  ctx.metrics["levels"] = rows;
}

// Analytic floating-point operation counts for the forward pass pieces.
long long flops_dense(long long rows, long long in, long long out) { return 2 * rows * in * out; }
long long flops_spmm(long long edges, long long cols) { return 2 * edges * cols; }

void cmd_bench(RunContext& ctx, const std::vector<int>& sizes, int repeats) {
  const AppConfig& cfg = ctx.config;
  std::string csv = "size,brute_ball_ms,kdtree_ball_ms,forward_ms,forward_flops_estimate\n";
  for (const int n : sizes) {
    if (n < 8) throw InvalidInput("bench: sizes must be at least 8");
    std::mt19937_64 rng(derive_seed(cfg.network.seed, static_cast<std::uint64_t>(n)));
    Matrix coords(n, 3);
    for (auto& v : coords.data) v = static_cast<real_t>((rng() >> 11) * 0x1.0p-53) * 2 - 1;
    const PointCloud cloud = normalize_unit_sphere(PointCloud(std::move(coords)));
    const real_t radius = real_t(0.1);  // covers ~1% of the unit sphere volume

    // Brute-force baseline: all-pairs strict-inequality filter.
    const auto t_brute = std::chrono::steady_clock::now();
    long long brute_edges = 0;
    for (int rep = 0; rep < repeats; ++rep) {
      brute_edges = 0;
      const real_t sq = radius * radius;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) brute_edges += sq_dist3(cloud.point(i), cloud.point(j)) < sq;
    }
    const double brute_ms = elapsed_ms(t_brute) / repeats;

    const auto t_tree = std::chrono::steady_clock::now();
    long long tree_edges = 0;
    for (int rep = 0; rep < repeats; ++rep) tree_edges = ball_query(cloud, cloud, radius).num_edges();
    const double tree_ms = elapsed_ms(t_tree) / repeats;
    if (tree_edges != brute_edges) throw std::runtime_error("bench: query engines disagree on the edge count");

    NetworkConfig ncfg = cfg.network;
    ncfg.set_input_points(n);
    Model model(ncfg);
    std::mt19937_64 frng(derive_seed(cfg.network.seed, 0xF0 + static_cast<std::uint64_t>(n)));
    const auto t_fwd = std::chrono::steady_clock::now();
    Matrix out;
    for (int rep = 0; rep < repeats; ++rep) out = model.logits(cloud, frng);
    const double fwd_ms = elapsed_ms(t_fwd) / repeats;
    if (!out.all_finite()) throw std::runtime_error("bench: non-finite forward output");

    // Edge counts for the estimate come from one grouping pass per stage.
    long long flops = flops_dense(n, 3, ncfg.stage_widths[0]);
    {
      PointCloud p_src = cloud;
      std::mt19937_64 srng(derive_seed(cfg.network.seed, 0xE0 + static_cast<std::uint64_t>(n)));
      int in_w = ncfg.stage_widths[0];
      for (int s = 0; s < 4; ++s) {
        const DilationField field = dilation_field(p_src, ncfg.bandwidth, ncfg.stage_sq_radius(s));
        const std::vector<int> idx =
            random_subsample_indices(p_src.size(), std::min(ncfg.stage_point_counts[s], p_src.size()), srng);
        PointCloud p_keys(take_rows(p_src.coords, idx));
        std::vector<real_t> key_radii(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) key_radii[i] = field.radii[idx[i]];
        const SparseDirectedGraph g = ball_query(p_keys, p_src, key_radii);
        const long long e = g.num_edges();
        const long long m = static_cast<long long>(idx.size());
        const int out_w = ncfg.stage_widths[s];
        const int dk = attention_dim(in_w);
        flops += flops_dense(p_src.size(), in_w + 3, dk) + flops_dense(m, in_w + 3, dk);  // projections
        flops += flops_spmm(e, dk) + 2 * flops_spmm(e, 1);                                // scores + renorm passes
        flops += flops_spmm(e, in_w) + flops_spmm(e, 3);                                  // feature + coord mixes
        flops += flops_dense(m, 2 * in_w, out_w) + flops_dense(m, 9, out_w);
        p_src = std::move(p_keys);
        in_w = out_w;
      }
      flops += flops_dense(1, 2 * in_w, ncfg.head_hidden) + flops_dense(1, ncfg.head_hidden, ncfg.num_classes);
    }

    csv += std::to_string(n) + "," + std::to_string(brute_ms) + "," + std::to_string(tree_ms) + "," +
           std::to_string(fwd_ms) + "," + std::to_string(flops) + "\n";
    std::cout << "bench: N=" << n << " brute " << brute_ms << " ms, kd-tree " << tree_ms << " ms, forward " << fwd_ms
              << " ms, ~" << flops << " flops\n";
  }
  const std::string path = ctx.out_dir + "/bench.csv";
  write_text(path, csv);
  ctx.outputs.push_back(path);
  ctx.metrics["sizes"] = sizes;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "diffconv: density-dilated graph convolution engine for point clouds.\n"
      "Commands emit CSV/JSON artifacts plus a report.json with the resolved\n"
      "configuration for reproducibility."};
  app.footer(
      "Exit codes:\n"
      "  0  success\n"
      "  1  internal error\n"
      "  2  usage or validation error\n"
      "  3  file parse error (bad config/mesh/cloud, with line numbers)\n"
      "  4  I/O error (missing or unwritable files)\n"
      "Environment:\n"
      "  DIFFCONV_DATA_ROOT  root directory for dataset paths (echoed into reports)");
  app.require_subcommand(0, 1);
  app.fallthrough();  // global flags remain valid after the subcommand name

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = ".";
  int threads = 0;
  app.add_option("--config", config_path, "configuration file (key = value lines)");
  app.add_option("--seed", seed, "override the run seed")->each([&](const std::string&) { seed_given = true; });
  app.add_option("--out", out_dir, "output directory (default .)");
  app.add_option("--threads", threads, "worker thread cap (0 = library default)");

  // density
  auto* density = app.add_subcommand("density", "per-point kernel density and dilated radii as CSV");
  std::string density_input;
  int density_points = 0;
  density->add_option("--input", density_input, "cloud source: synth:<shape>:<n>:<seed>, .off, or PCD-TXT file")
      ->required();
  density->add_option("--points", density_points, "sample count when the input is a mesh");

  // group
  auto* group = app.add_subcommand("group", "neighborhood statistics and directedness rate");
  std::string group_input, group_strategy = "dilated";
  int group_points = 0, group_k = 0;
  real_t group_radius = 0;
  group->add_option("--input", group_input, "cloud source (as in density)")->required();
  group->add_option("--strategy", group_strategy, "dilated | ball | knn (default dilated)");
  group->add_option("--radius", group_radius, "ball radius (default sqrt(base_sq_radius))");
  group->add_option("--k", group_k, "neighbor count for knn (default knn_k)");
  group->add_option("--points", group_points, "sample count when the input is a mesh");

  // train / ablate
  auto* train = app.add_subcommand("train", "train on the configured dataset; writes metrics.csv and model.ckpt");
  auto* ablate = app.add_subcommand("ablate", "train an ablation variant (switch overrides below)");
  std::string ab_grouping, ab_attention;
  bool ab_no_smooth = false, ab_no_pos = false, ab_no_renorm = false;
  int ab_knn_k = 0;
  for (CLI::App* cmd : {ablate}) {
    cmd->add_option("--grouping", ab_grouping, "dilated | ball | knn");
    cmd->add_option("--attention", ab_attention, "masked | uniform | spatial | feature | inverse_density");
    cmd->add_flag("--no-smoothing", ab_no_smooth, "use the plain neighborhood mix instead of its residual");
    cmd->add_flag("--no-positional", ab_no_pos, "drop the positional encoding term");
    cmd->add_flag("--no-balanced-renorm", ab_no_renorm, "plain scaled softmax attention");
    cmd->add_option("--knn-k", ab_knn_k, "neighbor count for knn grouping");
  }

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the configured dataset's test split");
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  // noise-bench
  auto* noise = app.add_subcommand("noise-bench", "OA under appended uniform noise points, per level");
  std::string noise_ckpt;
  std::vector<int> noise_levels{0, 10, 20, 50};
  noise->add_option("--checkpoint", noise_ckpt, "checkpoint file")->required();
  noise->add_option("--levels", noise_levels, "noise point counts")->delimiter(',');

  // bench
  auto* bench = app.add_subcommand("bench", "timings: brute vs kd-tree queries, forward pass, FLOP estimate");
  std::vector<int> bench_sizes{256, 1024, 4096};
  int bench_repeats = 3;
  bench->add_option("--sizes", bench_sizes, "cloud sizes")->delimiter(',');
  bench->add_option("--repeats", bench_repeats, "repetitions per measurement");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunContext ctx;
    if (const char* env = std::getenv("DIFFCONV_DATA_ROOT")) ctx.data_root_env = env;
    if (!config_path.empty()) ctx.config = parse_config_file(config_path);
    if (seed_given) {
      ctx.config.network.seed = seed;
      ctx.config.train.seed = seed;
    }
    ctx.out_dir = out_dir;
    std::filesystem::create_directories(ctx.out_dir);
#if defined(_OPENMP)
    if (threads > 0) omp_set_num_threads(threads);
#endif
    ctx.config.network.validate();

    if (density->parsed()) {
      cmd_density(ctx, density_input, density_points > 0 ? density_points : ctx.config.points_per_cloud);
      write_report(ctx, "density");
    } else if (group->parsed()) {
      const real_t radius =
          group_radius > 0 ? group_radius : std::sqrt(ctx.config.network.base_sq_radius);
      const int k = group_k > 0 ? group_k : ctx.config.network.knn_k;
      cmd_group(ctx, group_input, group_strategy, group_points > 0 ? group_points : ctx.config.points_per_cloud,
                radius, k);
      write_report(ctx, "group");
    } else if (train->parsed()) {
      run_training(ctx, "train");
      write_report(ctx, "train");
    } else if (ablate->parsed()) {
      NetworkConfig& n = ctx.config.network;
      if (!ab_grouping.empty()) n.grouping = grouping_from_string(ab_grouping);
      if (!ab_attention.empty()) n.attention = attention_from_string(ab_attention);
      if (ab_no_smooth) n.laplacian_smoothing = false;
      if (ab_no_pos) n.positional_encoding = false;
      if (ab_no_renorm) n.balanced_renorm = false;
      if (ab_knn_k > 0) n.knn_k = ab_knn_k;
      ctx.extra["variant"] = {{"grouping", to_string(n.grouping)},
                              {"attention", to_string(n.attention)},
                              {"laplacian_smoothing", n.laplacian_smoothing},
                              {"positional_encoding", n.positional_encoding},
                              {"balanced_renorm", n.balanced_renorm}};
      run_training(ctx, "ablate");
      write_report(ctx, "ablate");
    } else if (eval->parsed()) {
      cmd_eval(ctx, eval_ckpt);
      write_report(ctx, "eval");
    } else if (noise->parsed()) {
      cmd_noise_bench(ctx, noise_ckpt, noise_levels);
      write_report(ctx, "noise-bench");
    } else if (bench->parsed()) {
      cmd_bench(ctx, bench_sizes, std::max(1, bench_repeats));
      write_report(ctx, "bench");
    } else {
      std::cerr << app.help() << "\n";
      return kExitUsage;
    }
    return kExitOk;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace diffconv
