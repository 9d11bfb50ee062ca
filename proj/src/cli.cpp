#include "ibpcat/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ibpcat/analysis.hpp"
#include "ibpcat/gibbs.hpp"
#include "ibpcat/io.hpp"
#include "ibpcat/laplace.hpp"
#include "ibpcat/synthgen.hpp"
#include "ibpcat/vi.hpp"

namespace ibpcat::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Typed view of one command's JSON config. Unknown keys are rejected before
// anything runs; every value read is echoed into `resolved`.
class Options {
 public:
  Options(json raw, std::set<std::string> allowed, fs::path base)
      : raw_(std::move(raw)), base_(std::move(base)) {
    if (!raw_.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, value] : raw_.items()) {
      if (!allowed.count(key)) throw UsageError("unknown config key \"" + key + "\"");
    }
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    T v = fallback;
    if (raw_.contains(key) && !raw_[key].is_null()) {
      try {
        v = raw_[key].get<T>();
      } catch (const json::exception&) {
        throw UsageError("config key \"" + key + "\" has the wrong type");
      }
    }
    resolved[key] = v;
    return v;
  }

  std::optional<fs::path> path(const std::string& key) {
    if (!raw_.contains(key) || raw_[key].is_null()) return std::nullopt;
    if (!raw_[key].is_string()) throw UsageError("config key \"" + key + "\" must be a path");
    fs::path p = raw_[key].get<std::string>();
    if (p.is_relative()) p = base_ / p;
    resolved[key] = p.lexically_normal().string();
    return p.lexically_normal();
  }

  fs::path required_path(const std::string& key) {
    auto p = path(key);
    if (!p) throw UsageError("config key \"" + key + "\" is required");
    return *p;
  }

  json resolved = json::object();

 private:
  json raw_;
  fs::path base_;
};

struct Invocation {
  std::string command;
  fs::path out;
  json config = json::object();
  fs::path config_dir = fs::current_path();
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  fs::path file(const std::string& name, const std::string& kind) {
    files_.push_back({{"name", name}, {"kind", kind}});
    return dir_ / name;
  }

  void finish(const Invocation& inv, const json& resolved, std::uint64_t seed, double seconds,
              json extra) {
    json record = {{"command", inv.command},
                   {"config", resolved},
                   {"seed", seed},
                   {"version", std::string(kVersion)},
                   {"wall_clock_seconds", seconds},
                   {"finished_at", timestamp()}};
    io::write_json(dir_ / "run.json", record);
    files_.push_back({{"name", "run.json"}, {"kind", "reproducibility record"}});
    json manifest = {{"command", inv.command}, {"version", std::string(kVersion)},
                     {"files", files_}};
    for (auto& [k, v] : extra.items()) manifest[k] = v;
    io::write_json(dir_ / "manifest.json", manifest);
  }

 private:
  static std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  fs::path dir_;
  json files_ = json::array();
};

std::uint64_t resolve_seed(Options& opt, const Invocation& inv) {
  auto seed = opt.get<std::uint64_t>("seed", 0);
  if (inv.seed) {
    seed = *inv.seed;
    opt.resolved["seed"] = seed;
  }
  return seed;
}

Hyperparams resolve_hyper(Options& opt, std::uint64_t seed) {
  Hyperparams h;
  h.alpha = opt.get<double>("alpha", 1.0);
  h.sigma_b_sq = opt.get<double>("sigma_b_sq", 1.0);
  h.seed = seed;
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return h;
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + '\n';
}

std::string maybe(const analysis::MaybeReal& v) { return v ? io::format_real(*v) : "NA"; }

std::string feature_name(std::size_t k) { return "feature_" + std::to_string(k + 1); }

std::string square_table(const Matrix& m) {
  std::vector<std::string> head{"feature"};
  for (Eigen::Index k = 0; k < m.cols(); ++k) head.push_back(feature_name(static_cast<std::size_t>(k)));
  std::string s = csv_row(head);
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    std::vector<std::string> row{feature_name(static_cast<std::size_t>(a))};
    for (Eigen::Index b = 0; b < m.cols(); ++b) row.push_back(io::format_real(m(a, b)));
    s += csv_row(row);
  }
  return s;
}

std::string image_rows(const std::vector<std::vector<std::uint8_t>>& images) {
  std::string s;
  if (images.empty()) return s;
  std::vector<std::string> head;
  for (std::size_t p = 0; p < images[0].size(); ++p) head.push_back("pixel_" + std::to_string(p + 1));
  s += csv_row(head);
  for (const auto& img : images) {
    std::vector<std::string> row;
    for (auto v : img) row.push_back(v ? "1" : "0");
    s += csv_row(row);
  }
  return s;
}

json run_synth_images(const Invocation& inv, Options& opt, Outputs& out, std::uint64_t& seed) {
  synthgen::ImageGenConfig cfg;
  cfg.n_samples = opt.get<std::size_t>("n_samples", cfg.n_samples);
  cfg.presence_prob = opt.get<double>("presence_prob", cfg.presence_prob);
  cfg.noise_flip_prob = opt.get<double>("noise_flip_prob", cfg.noise_flip_prob);
  seed = resolve_seed(opt, inv);
  cfg.seed = seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Rng rng = Rng::stream(seed, 0);
  const auto data = synthgen::generate_images(cfg, rng);
  io::save_dataset(out.file("data.csv", "dataset"), data.x);
  io::save_features(out.file("true_z.csv", "features"), data.true_z);
  io::write_text(out.file("composites.csv", "images"), image_rows(data.composites));
  std::vector<std::vector<std::uint8_t>> bases;
  for (const auto& b : cfg.base_images) bases.push_back(b.pixels);
  io::write_text(out.file("base_images.csv", "images"), image_rows(bases));
  const auto& b0 = cfg.base_images[0];
  return {{"image_height", b0.height}, {"image_width", b0.width}};
}

json run_synth_cat(const Invocation& inv, Options& opt, Outputs& out, std::uint64_t& seed) {
  synthgen::CategoricalGenConfig cfg;
  cfg.n_rows = opt.get<std::size_t>("n_rows", cfg.n_rows);
  cfg.n_dims = opt.get<std::size_t>("n_dims", cfg.n_dims);
  cfg.k_true = opt.get<std::size_t>("k_true", cfg.k_true);
  cfg.cardinalities = opt.get<std::vector<int>>("cardinalities", {});
  cfg.feature_probs = opt.get<std::vector<double>>("feature_probs", {});
  seed = resolve_seed(opt, inv);
  cfg.hyper = resolve_hyper(opt, seed);
  try {
    cfg.validate();
    for (int r : cfg.resolved_cardinalities()) {
      if (r < 2) throw std::invalid_argument("cardinalities must be at least 2");
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Rng rng = Rng::stream(seed, 0);
  const auto data = synthgen::generate_categorical(cfg, rng);
  io::save_dataset(out.file("data.csv", "dataset"), data.x);
  io::save_features(out.file("true_z.csv", "features"), data.true_z);
  io::write_json(out.file("true_b.json", "weights"), io::weights_to_json(data.true_b));
  return json::object();
}

json run_gibbs(const Invocation& inv, Options& opt, Outputs& out, std::uint64_t& seed) {
  const auto data_path = opt.required_path("data");
  gibbs::GibbsConfig cfg;
  cfg.n_iterations = opt.get<std::size_t>("n_iterations", cfg.n_iterations);
  cfg.burn_in = opt.get<std::size_t>("burn_in", cfg.burn_in);
  cfg.k_init = opt.get<std::size_t>("k_init", cfg.k_init);
  cfg.p_init = opt.get<double>("p_init", cfg.p_init);
  cfg.max_new_features_per_step =
      opt.get<std::size_t>("max_new_features_per_step", cfg.max_new_features_per_step);
  cfg.k_cap = opt.get<std::size_t>("k_cap", cfg.k_cap);
  cfg.skip_all_baseline_rows = opt.get<bool>("skip_all_baseline_rows", false);
  auto baseline = opt.get<std::vector<int>>("baseline_categories", {});
  for (int& c : baseline) c -= 1;  // 1-based in files
  cfg.baseline_categories = baseline;
  cfg.freeze_initial_columns = opt.get<bool>("freeze_initial_columns", false);
  cfg.threads = opt.get<std::size_t>("threads", 1);
  if (inv.threads) {
    cfg.threads = *inv.threads;
    opt.resolved["threads"] = cfg.threads;
  }
  seed = resolve_seed(opt, inv);
  cfg.hyper = resolve_hyper(opt, seed);
  const auto init_path = opt.path("initial_z");

  const auto x = io::load_dataset(data_path);
  if (init_path) cfg.initial_state = io::load_features(*init_path);
  try {
    cfg.validate(x);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  WeightStack final_b;
  const auto trace = gibbs::run_chain(x, cfg, [&](std::size_t it, gibbs::CollapsedGibbs& g) {
    spdlog::info("gibbs iteration {} K+={}", it + 1, g.state().k_active());
    if (it + 1 == cfg.n_iterations) final_b = g.map_weights();
  });
  if (cfg.n_iterations == 0) final_b = laplace::map_weights(x, trace.final_z, cfg.hyper);

  std::string csv = "iteration,k_active,log_marginal_sum\n";
  for (std::size_t i = 0; i < trace.k_active.size(); ++i) {
    csv += csv_row({std::to_string(i + 1), std::to_string(trace.k_active[i]),
                    io::format_real(trace.log_marginal_sum[i])});
  }
  io::write_text(out.file("trace.csv", "trace"), csv);
  io::save_features(out.file("final_z.csv", "features"), trace.final_z);
  io::write_json(out.file("b_map.json", "weights"), io::weights_to_json(final_b));
  return {{"inputs", {{"data", fs::absolute(data_path).string()}}},
          {"features", "final_z.csv"},
          {"weights", "b_map.json"}};
}

json run_vi(const Invocation& inv, Options& opt, Outputs& out, std::uint64_t& seed) {
  const auto data_path = opt.required_path("data");
  const auto k = opt.get<std::size_t>("truncation", 10);
  if (k == 0) throw UsageError("truncation must be at least 1");
  vi::Schedule sched;
  sched.max_iterations = opt.get<std::size_t>("max_iterations", sched.max_iterations);
  sched.relative_tolerance = opt.get<double>("relative_tolerance", sched.relative_tolerance);
  seed = resolve_seed(opt, inv);
  const auto hyper = resolve_hyper(opt, seed);
  const auto warm_z = opt.path("warm_start_z");
  const auto warm_b = opt.path("warm_start_b");
  if (warm_z.has_value() != warm_b.has_value()) {
    throw UsageError("warm_start_z and warm_start_b must be given together");
  }

  const auto x = io::load_dataset(data_path);
  Rng rng = Rng::stream(seed, 0);
  auto init = warm_z ? vi::warm_start(x, k, io::load_features(*warm_z),
                                      io::weights_from_json(io::read_json(*warm_b)), hyper, rng)
                     : vi::initial_state(x, k, hyper, rng);
  const auto result = vi::run_vi(x, std::move(init), hyper, sched);
  spdlog::info("vi finished after {} cycles, bound {}", result.bound_trace.size(),
               result.bound_trace.empty() ? 0.0 : result.bound_trace.back());

  std::string csv = "cycle,bound\n";
  for (std::size_t i = 0; i < result.bound_trace.size(); ++i) {
    csv += csv_row({std::to_string(i + 1), io::format_real(result.bound_trace[i])});
  }
  io::write_text(out.file("bound.csv", "trace"), csv);
  io::write_json(out.file("state.json", "variational state"), io::vi_state_to_json(result.state));
  std::string nu;
  {
    std::vector<std::string> head;
    for (std::size_t j = 0; j < k; ++j) head.push_back(feature_name(j));
    nu = csv_row(head);
    for (Eigen::Index n = 0; n < result.state.nu.rows(); ++n) {
      std::vector<std::string> row;
      for (Eigen::Index j = 0; j < result.state.nu.cols(); ++j) {
        row.push_back(io::format_real(result.state.nu(n, j)));
      }
      nu += csv_row(row);
    }
  }
  io::write_text(out.file("nu.csv", "feature probabilities"), nu);
  io::save_features(out.file("z_binarized.csv", "features"), vi::binarize(result.state.nu));
  return {{"inputs", {{"data", fs::absolute(data_path).string()}}},
          {"features", "z_binarized.csv"},
          {"converged", result.converged}};
}

json run_analyze(const Invocation& inv, Options& opt, Outputs& out, std::uint64_t& seed) {
  std::optional<fs::path> data_path = opt.path("data");
  std::optional<fs::path> z_path = opt.path("z");
  std::optional<fs::path> b_path = opt.path("b_map");
  if (const auto dir = opt.path("input_dir")) {
    const auto manifest = io::read_json(*dir / "manifest.json");
    if (!data_path && manifest.contains("inputs")) {
      data_path = manifest["inputs"].at("data").get<std::string>();
    }
    if (!z_path && manifest.contains("features")) {
      z_path = *dir / manifest["features"].get<std::string>();
    }
    if (!b_path && manifest.contains("weights")) {
      b_path = *dir / manifest["weights"].get<std::string>();
    }
  }
  if (!data_path || !z_path) throw UsageError("analyze needs data and z (or an input_dir)");
  const double threshold = opt.get<double>("flip_threshold", 0.8);
  const bool flip = opt.get<bool>("flip", true);
  const auto top = opt.get<std::size_t>("top_patterns", 20);
  auto targets = opt.get<std::vector<int>>("target_categories", {});
  seed = resolve_seed(opt, inv);
  const auto hyper = resolve_hyper(opt, seed);

  const auto x = io::load_dataset(*data_path);
  auto z = io::load_features(*z_path);
  if (z.n_rows() != x.n_rows()) throw UsageError("features and data differ in row count");
  if (targets.empty()) targets.assign(x.n_cols(), 2);
  if (targets.size() != x.n_cols()) throw UsageError("target_categories needs one entry per dimension");
  for (int& t : targets) t -= 1;

  std::vector<std::size_t> flipped;
  if (flip) {
    auto res = analysis::flip_prevalent_features(z, threshold);
    z = std::move(res.z);
    flipped = std::move(res.flipped);
  }
  // weights are re-fit whenever Z changed or none were supplied
  const bool refit = !flipped.empty() || !b_path;
  const WeightStack b = refit ? laplace::map_weights(x, z, hyper)
                              : io::weights_from_json(io::read_json(*b_path));
  if (!b.matches(z.k_active(), x.cardinalities())) {
    throw UsageError("weights do not match the feature matrix and data");
  }
  const std::size_t k = z.k_active();

  io::save_features(out.file("features_used.csv", "features"), z);
  io::write_json(out.file("weights_used.json", "weights"), io::weights_to_json(b));

  const auto prev = analysis::feature_prevalence(z);
  {
    std::string s = "feature,prevalence,single_feature_prevalence\n";
    for (std::size_t j = 0; j < k; ++j) {
      s += csv_row({feature_name(j), io::format_real(prev.overall[j]),
                    io::format_real(prev.single[j])});
    }
    io::write_text(out.file("prevalence.csv", "table"), s);
  }
  if (k >= 2) {
    const auto co = analysis::cooccurrence_tables(z);
    io::write_text(out.file("cooccurrence_empirical.csv", "table"), square_table(co.empirical));
    io::write_text(out.file("cooccurrence_product.csv", "table"), square_table(co.product));
  }
  {
    const auto cond = analysis::conditional_cooccurrence(z);
    std::vector<std::string> head{"given"};
    for (std::size_t j = 0; j < k; ++j) head.push_back(feature_name(j));
    std::string s = csv_row(head);
    for (std::size_t a = 0; a < k; ++a) {
      std::vector<std::string> row{feature_name(a)};
      for (std::size_t bb = 0; bb < k; ++bb) row.push_back(maybe(cond[a][bb]));
      s += csv_row(row);
    }
    io::write_text(out.file("conditional_cooccurrence.csv", "table"), s);
  }
  {
    std::string s = "rank,pattern,count,fraction\n";
    const auto census = analysis::pattern_census(z, top);
    for (std::size_t i = 0; i < census.size(); ++i) {
      std::string bits;
      for (auto v : census[i].pattern) bits += v ? '1' : '0';
      if (bits.empty()) bits = "-";
      s += csv_row({std::to_string(i + 1), bits, std::to_string(census[i].count),
                    io::format_real(static_cast<double>(census[i].count) /
                                    static_cast<double>(std::max<std::size_t>(1, z.n_rows())))});
    }
    io::write_text(out.file("census.csv", "table"), s);
  }

  const auto baseline = analysis::empirical_baseline(x, targets);
  {
    std::string s = "dimension,target_category,baseline\n";
    for (std::size_t d = 0; d < x.n_cols(); ++d) {
      s += csv_row({std::to_string(d + 1), std::to_string(targets[d] + 1),
                    io::format_real(baseline[d])});
    }
    io::write_text(out.file("baseline.csv", "series"), s);
  }
  {
    std::vector<std::string> head{"pattern"};
    for (std::size_t d = 0; d < x.n_cols(); ++d) head.push_back("dim_" + std::to_string(d + 1));
    std::string probs = csv_row(head);
    std::string ratios = probs;
    for (std::size_t j = 0; j <= k; ++j) {
      analysis::FeaturePattern p;
      if (j > 0) p.active.push_back(j - 1);
      const auto pv = analysis::pattern_probabilities(b, p);
      std::vector<double> target_prob(x.n_cols());
      for (std::size_t d = 0; d < x.n_cols(); ++d) target_prob[d] = pv[d][targets[d]];
      const auto ratio = analysis::probability_ratio(target_prob, baseline);
      std::vector<std::string> prow{j == 0 ? "none" : feature_name(j - 1)};
      std::vector<std::string> rrow = prow;
      for (std::size_t d = 0; d < x.n_cols(); ++d) {
        prow.push_back(io::format_real(target_prob[d]));
        rrow.push_back(maybe(ratio[d]));
      }
      probs += csv_row(prow);
      ratios += csv_row(rrow);
    }
    io::write_text(out.file("pattern_probabilities.csv", "series"), probs);
    io::write_text(out.file("probability_ratio.csv", "series"), ratios);
  }

  json flipped_json = json::array();
  for (auto f : flipped) flipped_json.push_back(f + 1);
  return {{"inputs", {{"data", fs::absolute(*data_path).string()},
                      {"features", fs::absolute(*z_path).string()}}},
          {"flipped_features", flipped_json},
          {"weights_refit", refit}};
}

using Runner = json (*)(const Invocation&, Options&, Outputs&, std::uint64_t&);

struct Command {
  const char* name;
  const char* help;
  Runner run;
  std::set<std::string> keys;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> table = {
      {"synth-images", "generate the noisy composite-image dataset", run_synth_images,
       {"n_samples", "presence_prob", "noise_flip_prob", "seed"}},
      {"synth-cat", "generate a planted categorical dataset", run_synth_cat,
       {"n_rows", "n_dims", "k_true", "cardinalities", "feature_probs", "alpha", "sigma_b_sq",
        "seed"}},
      {"gibbs", "run the collapsed Gibbs sampler", run_gibbs,
       {"data", "alpha", "sigma_b_sq", "n_iterations", "burn_in", "k_init", "p_init",
        "max_new_features_per_step", "k_cap", "skip_all_baseline_rows", "baseline_categories",
        "initial_z", "freeze_initial_columns", "threads", "seed"}},
      {"vi", "run truncated variational inference", run_vi,
       {"data", "alpha", "sigma_b_sq", "truncation", "max_iterations", "relative_tolerance",
        "warm_start_z", "warm_start_b", "seed"}},
      {"analyze", "emit prevalence, co-occurrence, census and probability reports", run_analyze,
       {"input_dir", "data", "z", "b_map", "target_categories", "flip", "flip_threshold",
        "top_patterns", "alpha", "sigma_b_sq", "seed"}},
  };
  return table;
}

void configure_logging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_color_st("ibpcat");
    spdlog::set_default_logger(logger);
    done = true;
  }
  const char* level = std::getenv("IBPCAT_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  configure_logging();

  CLI::App app{"Latent feature inference for categorical data"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Invocation inv;
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<CLI::App*> subs;
  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "seed (overrides the config)");
    sub->add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0 && e.get_exit_code() != 0) {
      std::cerr << app.help();
      return kUsage;
    }
    return kOk;
  }

  const Command* chosen = nullptr;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) {
      chosen = &commands()[i];
      if (subs[i]->count("--seed")) inv.seed = seed;
      if (subs[i]->count("--threads")) inv.threads = threads;
    }
  }
  inv.command = chosen->name;
  inv.out = out_dir;

  const auto started = std::chrono::steady_clock::now();
  try {
    if (!config_path.empty()) {
      try {
        inv.config = io::read_json(config_path);
      } catch (const std::runtime_error& e) {
        throw UsageError(e.what());
      }
      inv.config_dir = fs::absolute(config_path).parent_path();
    }
    Options opt(inv.config, chosen->keys, inv.config_dir);
    Outputs out(inv.out);
    std::uint64_t used_seed = 0;
    json extra = chosen->run(inv, opt, out, used_seed);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.finish(inv, opt.resolved, used_seed, seconds, std::move(extra));
    spdlog::info("{} finished in {:.2f} s", inv.command, seconds);
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace ibpcat::cli
