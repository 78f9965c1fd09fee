// abmem: data generation, training, evaluation, baselines and gradient checks.
//
// Exit codes: 0 ok, 2 usage, 3 data generation, 4 data, 5 numeric, 6 mismatch.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "abmem/baselines.hpp"
#include "abmem/binary_io.hpp"
#include "abmem/checkpoint.hpp"
#include "abmem/experiment.hpp"
#include "abmem/gradcheck.hpp"
#include "abmem/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace abmem;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kDatagen = 3, kData = 4, kNumeric = 5, kMismatch = 6 };

class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Level { error = 0, info = 1, debug = 2 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("ABMEM_LOG");
    if (env == nullptr) return Level::info;
    const std::string v = env;
    if (v == "error") return Level::error;
    if (v == "debug") return Level::debug;
    if (v != "info") std::cerr << "abmem: unknown ABMEM_LOG '" << v << "', using info\n";
    return Level::info;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Config flags shared by train, eval, baseline and episode. Named flags map
// onto config keys; --set takes any key=value.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::deque<std::string> storage;
  std::vector<std::pair<CLI::Option*, std::string>> named;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file");
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
    bind(app, "--bank", "bank", "bank file");
    bind(app, "--seed", "seed", "root seed (default 0)");
    bind(app, "--steps", "train_steps", "training steps");
    bind(app, "--n-way", "n_way", "classes per episode");
    bind(app, "--k-shot", "k_shot", "support examples per class");
    bind(app, "--queries", "queries_per_class", "query examples per class");
    bind(app, "--external-classes", "external_classes", "label ids below this form the external pool");
    bind(app, "--label-flip", "label_flip", "external pool label-flip probability");
    bind(app, "--eval-workers", "eval_workers", "parallel evaluation workers");
    bind(app, "--batch", "batch_size", "training batch size");
    bind(app, "--lr", "lr", "ADAM learning rate");
    bind(app, "--hidden", "hidden", "controller hidden size");
    bind(app, "--classifier", "classifier", "lstm or fc");
  }

  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    storage.emplace_back();
    auto* opt = app->add_option(flag, storage.back(), help);
    opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);  // later flags win
    named.emplace_back(opt, key);
  }

  // defaults < config file < flags
  RunConfig resolve() const {
    RunConfig config;
    if (!config_file.empty()) apply_key_values(config, parse_key_values(read_text(config_file)));
    KeyValues flags;
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (named[i].first->count() > 0) flags[named[i].second] = storage[i];
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      flags[s.substr(0, eq)] = s.substr(eq + 1);
    }
    try {
      apply_key_values(config, flags);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return config;
  }
};

EmbeddingSet load_configured_bank(RunConfig& config) {
  if (config.bank.empty()) throw UsageError("no bank given (--bank or bank= in the config)");
  EmbeddingSet data = load_bank(config.bank);
  adopt_bank_dims(config, data);
  try {
    config.model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return data;
}

// ---- gen -------------------------------------------------------------------

int cmd_gen(const SyntheticSpec& spec, const std::string& out) {
  const EmbeddingSet set = gen_synthetic(spec);
  save_bank(out, set);
  std::cout << "wrote " << set.records.size() << " records, " << set.labels.size()
            << " labels (visual " << set.visual_dim << ", label " << set.label_dim << ") to "
            << out << "\n";
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigFlags flags;
  std::string out;
  std::string manifest;
};

int cmd_train(TrainArgs& args) {
  RunConfig config;
  if (!args.manifest.empty()) {
    const json m = json::parse(read_text(args.manifest));
    config = run_config_from_json(m.at("config"));
  } else {
    config = args.flags.resolve();
  }
  EmbeddingSet data = load_configured_bank(config);
  const Workspace ws = prepare_workspace(config, data);

  fs::create_directories(args.out);
  const fs::path dir(args.out);
  const std::string ckpt_path = (dir / "checkpoint.bin").string();
  const std::string metrics_path = (dir / "metrics.jsonl").string();
  const std::string config_path = (dir / "config.txt").string();
  const std::string episode_path = (dir / "episode.jsonl").string();
  const std::string manifest_path = (dir / "manifest.json").string();

  write_text(config_path, format_key_values(to_key_values(config)));
  write_text(episode_path, episode_manifest(ws.episode));

  json manifest = {{"version", version_string()},
                   {"seed", config.model.seed},
                   {"config", to_json(config)},
                   {"started_at", utc_now()},
                   {"paths",
                    {{"bank", config.bank},
                     {"checkpoint", ckpt_path},
                     {"metrics", metrics_path},
                     {"config", config_path},
                     {"episode", episode_path}}}};

  AbstractionMemoryModel model(config.model);
  log(Level::info, "training " + std::to_string(model.parameters().scalar_count()) +
                       " parameters for " + std::to_string(config.train_steps) + " steps");
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path);

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t last_step = 0;
  double last_loss = std::nan("");
  int status = kOk;
  try {
    train_model(model, ws, config, [&](const StepMetrics& m) {
      const double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      metrics << json{{"step", m.step}, {"loss", m.loss}, {"grad_norm", m.grad_norm},
                      {"wall_ms", wall_ms}}.dump()
              << "\n";
      last_step = m.step;
      last_loss = m.loss;
      if (m.step % 100 == 0 || log_level() == Level::debug) {
        log(Level::info, "step " + std::to_string(m.step) + " loss " + std::to_string(m.loss));
      }
      return true;
    });
  } catch (const NumericError& e) {
    log(Level::error, std::string(e.what()) + "; keeping the last good checkpoint");
    status = kNumeric;
  }
  metrics.close();
  save_checkpoint(ckpt_path, snapshot(model.parameters()));

  manifest["finished_at"] = utc_now();
  manifest["status"] = status == kOk ? "ok" : "numeric_error";
  manifest["steps_completed"] = last_step;
  write_text(manifest_path, manifest.dump(2) + "\n");
  if (status == kOk) {
    std::cout << "trained " << last_step << " steps";
    if (last_step > 0) std::cout << ", final loss " << last_loss;
    std::cout << "; checkpoint " << ckpt_path << "\n";
  }
  return status;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  ConfigFlags flags;
  std::string run;
  std::string checkpoint;
  std::string episode;
  std::string report;
};

// Reads an episode manifest and looks its records up in the bank.
Episode load_episode(const std::string& path, const EmbeddingSet& data) {
  std::map<std::uint32_t, const EmbeddingRecord*> by_id;
  for (const auto& r : data.records) by_id[r.id] = &r;
  std::istringstream in(read_text(path));
  std::string line;
  Episode ep;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (header) {
      ep.n_way = j.at("n_way");
      ep.k_shot = j.at("k_shot");
      ep.classes = j.at("classes").get<std::vector<std::uint32_t>>();
      for (std::size_t c = 0; c < ep.classes.size(); ++c) ep.remap[ep.classes[c]] = c;
      header = false;
      continue;
    }
    const auto id = j.at("record_id").get<std::uint32_t>();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("episode record " + std::to_string(id) + " not in bank");
    LabeledPoint p{id, j.at("class").get<std::size_t>(), it->second->visual};
    (j.at("role") == "support" ? ep.support : ep.query).push_back(std::move(p));
  }
  if (header) throw DataError("episode manifest " + path + " is empty");
  return ep;
}

int cmd_eval(EvalArgs& args) {
  if (!args.run.empty()) {
    const fs::path dir(args.run);
    if (args.flags.config_file.empty()) args.flags.config_file = (dir / "config.txt").string();
    if (args.checkpoint.empty()) args.checkpoint = (dir / "checkpoint.bin").string();
  }
  if (args.checkpoint.empty()) throw UsageError("eval needs --run or --checkpoint");
  RunConfig config = args.flags.resolve();
  EmbeddingSet data = load_configured_bank(config);
  const Episode episode = args.episode.empty() ? prepare_workspace(config, data).episode
                                               : load_episode(args.episode, data);
  if (episode.n_way != config.model.n_way) {
    throw MismatchError("episode is " + std::to_string(episode.n_way) + "-way, model is " +
                        std::to_string(config.model.n_way) + "-way");
  }

  AbstractionMemoryModel model(config.model);
  try {
    restore(model.parameters(), load_checkpoint(args.checkpoint));
  } catch (const CheckpointError& e) {
    throw MismatchError(e.what());
  }
  const EvalResult result = evaluate(model, episode.query, config.eval_workers);

  std::size_t hits = 0;
  json per_query = json::array();
  for (std::size_t i = 0; i < episode.query.size(); ++i) {
    const auto& p = result.predictions[i];
    hits += p.label == episode.query[i].cls;
    per_query.push_back({{"record_id", episode.query[i].record_id},
                         {"class", episode.query[i].cls},
                         {"predicted", p.label},
                         {"probabilities", p.probabilities}});
  }
  std::cout << "accuracy " << result.accuracy << " (" << hits << "/" << episode.query.size()
            << ")\n";
  if (!args.report.empty()) {
    const json report = {{"version", version_string()},
                         {"checkpoint", args.checkpoint},
                         {"n_way", episode.n_way},
                         {"n_query", episode.query.size()},
                         {"accuracy", result.accuracy},
                         {"queries", per_query}};
    write_text(args.report, report.dump(2) + "\n");
  }
  return kOk;
}

// ---- baseline --------------------------------------------------------------

struct BaselineArgs {
  ConfigFlags flags;
  std::string method = "knn-l2";
  int runs = 1;
  double C = 0.1;
  std::size_t samples = kKvMemNNSamples;
  bool vary_episode = false;
  std::string report;
};

double run_baseline(const BaselineArgs& args, const EmbeddingSet& data, const Workspace& ws,
                    Rng& rng) {
  const Episode& ep = ws.episode;
  std::vector<std::size_t> predicted;
  if (args.method == "knn-l1" || args.method == "knn-l2") {
    const Metric metric = args.method == "knn-l1" ? Metric::l1 : Metric::l2;
    for (const auto& q : ep.query) predicted.push_back(knn_classify(ep.support, q.x, metric));
  } else if (args.method == "esvm") {
    predicted = esvm_fit_predict(ep.support, ep.query, args.C);
  } else {
    ExternalPool pool = ws.pool;
    for (const auto& s : ep.support) {
      pool.keys.push_back(s.x);
      pool.values.push_back(data.labels.at(ep.classes[s.cls]).embedding);
      pool.labels.push_back(ep.classes[s.cls]);
    }
    std::vector<std::vector<double>> class_embeddings;
    for (auto id : ep.classes) class_embeddings.push_back(data.labels.at(id).embedding);
    for (const auto& q : ep.query) {
      predicted.push_back(kvmemnn_classify(pool, class_embeddings, q.x, args.samples, rng));
    }
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ep.query.size(); ++i) hits += predicted[i] == ep.query[i].cls;
  return ep.query.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ep.query.size());
}

int cmd_baseline(BaselineArgs& args) {
  RunConfig config = args.flags.resolve();
  EmbeddingSet data = load_configured_bank(config);
  std::vector<double> per_run;
  Workspace ws = prepare_workspace(config, data);
  for (int r = 0; r < args.runs; ++r) {
    if (args.vary_episode && r > 0) {
      RunConfig shifted = config;
      shifted.model.seed = derive_seed(config.model.seed, "baseline.episode", r);
      ws = prepare_workspace(shifted, data);
    }
    Rng rng = make_rng(config.model.seed, "baseline.run", static_cast<std::uint64_t>(r));
    per_run.push_back(run_baseline(args, data, ws, rng));
    log(Level::debug, "run " + std::to_string(r) + " accuracy " + std::to_string(per_run.back()));
  }
  const json report = to_json(make_report(args.method, per_run));
  std::cout << report.dump() << "\n";
  if (!args.report.empty()) write_text(args.report, report.dump(2) + "\n");
  return kOk;
}

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, bool full) {
  GradCheckOptions options;
  options.seed = seed;
  bool all = true;
  for (const auto& r : run_gradcheck_suite(options, full)) {
    std::printf("%s %-14s max_rel_err=%.3e entries=%zu\n", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_error, r.entries);
    all = all && r.passed;
  }
  std::printf("%s\n", all ? "gradcheck: all passed" : "gradcheck: FAILED");
  return all ? kOk : kNumeric;
}

// ---- snapshot / episode ----------------------------------------------------

int cmd_snapshot(const std::string& checkpoint, const std::string& out) {
  std::vector<NamedTensor> bank;
  for (auto& t : load_checkpoint(checkpoint)) {
    if (t.name == "abs.keys" || t.name == "abs.values") bank.push_back(std::move(t));
  }
  if (bank.size() != 2) throw MismatchError("checkpoint has no abstraction bank");
  save_checkpoint(out, bank);
  std::cout << "wrote abstraction bank (" << bank[0].value.dim(0) << " slots) to " << out << "\n";
  return kOk;
}

int cmd_episode(ConfigFlags& flags, const std::string& out) {
  RunConfig config = flags.resolve();
  EmbeddingSet data = load_configured_bank(config);
  const std::string text = episode_manifest(prepare_workspace(config, data).episode);
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"abstraction-memory few-shot recognition"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic embedding bank");
  gen->add_option("--classes", spec.n_classes)->default_val(20);
  gen->add_option("--per-class", spec.per_class)->default_val(100);
  gen->add_option("--dim-visual", spec.visual_dim)->default_val(64);
  gen->add_option("--dim-label", spec.label_dim)->default_val(32);
  gen->add_option("--std", spec.cluster_std, "expected noise norm")->default_val(0.3);
  gen->add_option("--sep", spec.min_center_sep, "minimum centre distance")->default_val(1.0);
  gen->add_option("--seed", spec.seed)->default_val(0);
  gen->add_option("--out", gen_out)->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train on a sampled episode");
  train_args.flags.attach(train);
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--manifest", train_args.manifest, "replay the config of a previous run");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on an episode");
  eval_args.flags.attach(eval);
  eval->add_option("--run", eval_args.run, "training output directory");
  eval->add_option("--checkpoint", eval_args.checkpoint);
  eval->add_option("--episode", eval_args.episode, "episode manifest (JSONL)");
  eval->add_option("--report", eval_args.report, "JSON report path");

  BaselineArgs base_args;
  auto* baseline = app.add_subcommand("baseline", "run a comparison method");
  base_args.flags.attach(baseline);
  baseline->add_option("--method", base_args.method)
      ->check(CLI::IsMember({"knn-l1", "knn-l2", "esvm", "kvmemnn"}))
      ->default_val("knn-l2");
  baseline->add_option("--runs", base_args.runs)->check(CLI::PositiveNumber)->default_val(1);
  baseline->add_option("--C", base_args.C, "E-SVM regularisation")->default_val(0.1);
  baseline->add_option("--samples", base_args.samples, "KV-MemNN sampled pairs")->default_val(1000);
  baseline->add_flag("--vary-episode", base_args.vary_episode, "resample the episode per run");
  baseline->add_option("--report", base_args.report, "JSON report path");

  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  bool gc_full = false;
  gradcheck->add_option("--seed", gc_seed)->default_val(0);
  gradcheck->add_flag("--full", gc_full, "perturb every model parameter entry");

  std::string snap_ckpt, snap_out;
  auto* snap = app.add_subcommand("snapshot", "export the abstraction bank of a checkpoint");
  snap->add_option("--checkpoint", snap_ckpt)->required();
  snap->add_option("--out", snap_out)->required();

  ConfigFlags episode_flags;
  std::string episode_out;
  auto* episode = app.add_subcommand("episode", "export the configured episode as JSONL");
  episode_flags.attach(episode);
  episode->add_option("--out", episode_out, "path, or - for stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(spec, gen_out);
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*baseline) return cmd_baseline(base_args);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_full);
    if (*snap) return cmd_snapshot(snap_ckpt, snap_out);
    if (*episode) return cmd_episode(episode_flags, episode_out);
  } catch (const UsageError& e) {
    log(Level::error, e.what());
    return kUsage;
  } catch (const GenerationError& e) {
    log(Level::error, e.what());
    return kDatagen;
  } catch (const NumericError& e) {
    log(Level::error, e.what());
    return kNumeric;
  } catch (const MismatchError& e) {
    log(Level::error, e.what());
    return kMismatch;
  } catch (const CheckpointError& e) {
    log(Level::error, e.what());
    return kMismatch;
  } catch (const std::exception& e) {
    // Bank format, missing files, insufficient data.
    log(Level::error, e.what());
    return kData;
  }
  return kUsage;
}
