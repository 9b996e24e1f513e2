// trajgp: command-line driver for the trajectory GP pipeline.

#include "trajgp/cli/config.hpp"
#include "trajgp/cluster/clustering.hpp"
#include "trajgp/data/records.hpp"
#include "trajgp/eval/experiment.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trajgp;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  int jobs = 1;
  std::vector<std::string> overrides;
  std::string arch;
  bool resume = false;
  std::optional<std::size_t> sample_size;
};

struct Run {
  ExperimentConfig cfg;
  json resolved;
  std::string hash;
  fs::path dir;
  int jobs = 1;
  std::vector<std::string> artifacts;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(Run& run, const fs::path& rel, const std::string& text) {
  const fs::path path = run.dir / rel;
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
  run.artifacts.push_back(rel.generic_string());
}

void write_json(Run& run, const fs::path& rel, const json& j) { write_text(run, rel, j.dump(2) + "\n"); }

fs::path manifest_path(const Run& run) { return run.dir / "manifest.json"; }

json read_manifest(const Run& run) {
  std::ifstream in(manifest_path(run));
  if (!in) return json::object();
  try {
    return json::parse(in);
  } catch (const json::parse_error&) {
    throw DataError("run manifest " + manifest_path(run).string() + " is not valid JSON");
  }
}

void record_command(const Run& run, const std::string& command, const std::string& started) {
  json m = read_manifest(run);
  m["software_version"] = TRAJGP_VERSION;
  m["config_hash"] = run.hash;
  m["seed"] = run.cfg.seed;
  m["config"] = run.resolved;
  json artifacts = json::array();
  for (const auto& a : run.artifacts) artifacts.push_back(a);
  m["commands"][command] = {
      {"config_hash", run.hash}, {"started_at", started}, {"finished_at", utc_now()}, {"artifacts", artifacts}};
  std::ofstream out(manifest_path(run), std::ios::binary);
  out << m.dump(2) << "\n";
}

fs::path cohort_file(const Run& run) { return run.dir / "cohort.jsonl"; }
fs::path dataset_dir(const Run& run) { return run.dir / "dataset"; }
fs::path model_file(const Run& run) { return run.dir / "model.json"; }

std::vector<RawEncounter> load_encounters(const Run& run) {
  const auto& d = run.cfg.data;
  ReadReport report;
  std::vector<RawEncounter> enc;
  if (d.source == "synthetic") {
    if (!fs::exists(cohort_file(run)))
      throw DataError("no cohort at " + cohort_file(run).string() + "; run `trajgp generate` first");
    enc = read_encounters_jsonl(cohort_file(run), d.embedding_dim, d.codes, &report);
  } else {
    if (!fs::exists(d.path)) throw DataError("encounter file " + d.path.string() + " does not exist");
    enc = d.source == "jsonl" ? read_encounters_jsonl(d.path, d.embedding_dim, d.codes, &report)
                              : read_encounters_csv(d.path, d.codes, &report);
  }
  spdlog::info("read {} encounters ({} rows skipped)", enc.size(), report.skipped);
  for (const auto& e : report.errors) spdlog::warn("{}", e);
  return enc;
}

Dataset load_prepared(const Run& run) {
  if (!fs::exists(dataset_dir(run) / "manifest.json"))
    throw DataError("no preprocessed dataset at " + dataset_dir(run).string() + "; run `trajgp preprocess` first");
  return load_dataset(dataset_dir(run));
}

DklModel load_checkpoint(const Run& run) {
  if (!fs::exists(model_file(run)))
    throw DataError("no trained checkpoint at " + model_file(run).string() + "; run `trajgp train` first");
  return load_model(model_file(run));
}

std::map<std::string, int> load_labels(const Run& run) {
  fs::path path = run.cfg.data.labels;
  if (path.empty()) path = run.dir / "labels.csv";
  std::map<std::string, int> labels;
  std::ifstream in(path);
  if (!in) return labels;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    try {
      labels[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError("malformed label row '" + line + "' in " + path.string());
    }
  }
  return labels;
}

PreprocessConfig preprocess_config(const ExperimentConfig& cfg) {
  PreprocessConfig pc;
  pc.layout.embedding_dim = cfg.data.embedding_dim;
  pc.codes = cfg.data.codes;
  pc.split_seed = cfg.seed;
  return pc;
}

// ---- commands ---------------------------------------------------------------

void cmd_generate(Run& run) {
  const SyntheticCohort cohort = generate_synthetic_cohort(run.cfg.synthetic, run.cfg.seed);
  fs::create_directories(run.dir);
  write_encounters_jsonl(cohort_file(run), cohort.encounters);
  run.artifacts.push_back("cohort.jsonl");
  std::string labels = "patient_id,archetype\n";
  for (const auto& [id, a] : cohort.labels) labels += id + "," + std::to_string(a) + "\n";
  write_text(run, "labels.csv", labels);
  spdlog::info("generated {} patients, {} encounters", cohort.labels.size(), cohort.encounters.size());
}

void cmd_preprocess(Run& run) {
  const Dataset data = build_dataset(load_encounters(run), preprocess_config(run.cfg));
  save_dataset(data, dataset_dir(run));
  for (const char* f : {"manifest.json", "stats.json", "train.bin", "val.bin", "test.bin"})
    run.artifacts.push_back(std::string("dataset/") + f);
  spdlog::info("split {} / {} / {} patients", data.train.size(), data.val.size(), data.test.size());
}

int cmd_train(Run& run, bool resume) {
  if (resume) {
    const json m = read_manifest(run);
    if (m.contains("commands") && m["commands"].contains("train")) {
      const std::string previous = m["commands"]["train"].value("config_hash", "");
      if (previous != run.hash)
        throw ConfigError("--resume: configuration hash " + run.hash + " does not match the run manifest (" + previous +
                          ")");
      if (fs::exists(model_file(run))) {
        spdlog::info("checkpoint {} is up to date", model_file(run).string());
        run.artifacts = m["commands"]["train"]["artifacts"].get<std::vector<std::string>>();
        return kOk;
      }
    }
  }
  const Dataset data = load_prepared(run);
  std::string log;
  const TrainResult r = train_dkl(data, run.cfg.train, [&](const TrainLogEntry& e) {
    spdlog::debug("epoch {:4d}  elbo {:.6f}  val_mse {:.6f}  {:.0f} ms", e.epoch, e.elbo, e.val_mse, e.wall_ms);
    log += json{{"epoch", e.epoch}, {"elbo", e.elbo}, {"val_mse", e.val_mse}}.dump() + "\n";
  });
  save_model(r.model, model_file(run));
  run.artifacts.push_back("model.json");
  write_text(run, "train_log.jsonl", log);
  if (r.diverged) {
    spdlog::error("training diverged: {}; kept the best finite checkpoint (epoch {})", r.message, r.best_epoch);
    return kNumerical;
  }
  spdlog::info("best validation epoch {} of {}", r.best_epoch, r.log.size());
  return kOk;
}

int cmd_evaluate(Run& run) {
  const Dataset data = load_prepared(run);
  const DklModel model = load_checkpoint(run);
  const SamplePredictions p = predict_samples(model, data.test);
  const MetricReport m = evaluate_predictions(p.prediction, p.targets);
  const Vector train_y = sample_targets(data.train, enumerate_samples(data.train));
  const MetricReport b = evaluate_predictions(constant_prediction(train_y, p.targets.size()), p.targets);
  const std::string label = (model.head == Head::gp ? "DKL-GP (" : "MLE (") + to_string(model.extractor.arch) + ")";
  write_json(run, "evaluation.json", {{"model", label}, {"test", to_json(m)}, {"constant_baseline", to_json(b)}});
  const std::vector<std::uint64_t> one{run.cfg.seed};
  write_text(run, "evaluation.txt",
             format_seed_table({{label, summarize_seeds(one, {m})}, {"Constant mean", summarize_seeds(one, {b})}}));
  spdlog::info("test MSE {:.4f} (constant {:.4f})", m.mse, b.mse);

  if (!run.cfg.evaluation.protocol) return kOk;
  const auto encounters = load_encounters(run);
  const PreprocessConfig pc = preprocess_config(run.cfg);
  const SeedProtocolResult res = run_seed_protocol(
      run.cfg.evaluation.seeds,
      [&](std::uint64_t seed) {
        spdlog::info("protocol seed {}", seed);
        return run_single_seed(encounters, pc, run.cfg.train, seed);
      },
      run.jobs);
  write_json(run, "protocol.json", to_json(res));
  if (res.model)
    write_text(run, "protocol.txt", format_seed_table({{label, *res.model}, {"Constant mean", *res.baseline}}));
  if (res.failure) {
    spdlog::error("seed protocol stopped: {} (partial results saved)", *res.failure);
    return kNumerical;
  }
  return kOk;
}

void cmd_cluster(Run& run) {
  const Dataset data = load_prepared(run);
  const DklModel model = load_checkpoint(run);
  std::vector<PatientSequence> all;
  for (const auto* split : {&data.train, &data.val, &data.test}) all.insert(all.end(), split->begin(), split->end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
  const auto& cc = run.cfg.clustering;
  if (cc.sample_size > 0 && cc.sample_size < all.size()) {
    std::mt19937_64 rng(derive_seed(run.cfg.seed, "cluster.sample"));
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(cc.sample_size);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
  }
  const ProfileSet profiles = build_profiles(model, all, cc.profile);
  spdlog::info("built {} profiles of length {}", profiles.size(), profiles.profiles.cols());

  const ModelSelection sel = model_select(profiles.profiles, run.cfg.seed, cc.c_values, cc.methods, run.jobs);
  const SelectionRow& best = sel.best();
  StabilityConfig sc;
  sc.n_runs = cc.stability_runs;
  sc.subsample = cc.subsample;
  sc.seed = run.cfg.seed;
  const StabilityReport stab = stability_protocol(profiles.profiles, best.method, best.c, sc);

  json report = {{"selection", to_json(sel)}, {"stability", to_json(stab)}, {"n_patients", profiles.size()}};
  const auto truth = load_labels(run);
  if (!truth.empty()) {
    std::vector<int> t, l;
    for (std::size_t i = 0; i < profiles.patient_ids.size(); ++i) {
      const auto it = truth.find(profiles.patient_ids[i]);
      if (it == truth.end()) continue;
      t.push_back(it->second);
      l.push_back(best.labels[i]);
    }
    if (!t.empty()) {
      report["truth"] = {{"n_matched", t.size()}, {"ari", ari(l, t)}, {"nmi", nmi(l, t)}};
      spdlog::info("ARI against planted labels: {:.4f}", ari(l, t));
    }
  }
  write_json(run, "cluster/report.json", report);
  write_text(run, "cluster/selection.txt", format_selection_table(sel));
  write_text(run, "cluster/stability.txt", format_stability_table({stab}));
  write_text(run, "cluster/assignments.csv", assignments_csv(profiles.patient_ids, best.labels));
  write_text(run, "cluster/summary.csv", cluster_summary_csv(profiles, best.labels));
  write_text(run, "cluster/profiles.csv", profiles_csv(profiles));
  spdlog::info("selected {} with c = {}", to_string(best.method), best.c);
}

void cmd_ablate(Run& run) {
  const Dataset data = load_prepared(run);
  const auto rows = ablate_feature_groups(data, run.cfg.train, run.cfg.ablation_groups);
  write_json(run, "ablation.json", to_json(rows));
  write_text(run, "ablation.txt", format_ablation_table(rows));
}

void cmd_importance(Run& run) {
  const Dataset data = load_prepared(run);
  const DklModel model = load_checkpoint(run);
  std::vector<ImportanceResult> rows;
  for (const auto& g : run.cfg.importance_groups)
    rows.push_back(permutation_importance(model, data.layout, data.test, g, run.cfg.seed));
  write_json(run, "importance.json", to_json(rows));
  write_text(run, "importance.txt", format_importance_table(rows));
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("trajgp");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("TRAJGP_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("TRAJGP_LOG='{}' is not one of error, info, debug; using info", level);
  }
}

Run prepare_run(const Options& opt) {
  std::ifstream in(opt.config);
  if (!in) throw ConfigError("cannot open configuration file " + opt.config);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("configuration file " + opt.config + " is not valid JSON: " + e.what());
  }
  for (const auto& o : opt.overrides) apply_override(doc, o);
  if (!opt.arch.empty()) doc["extractor"]["arch"] = opt.arch;
  if (opt.seed) doc["seed"] = *opt.seed;
  if (opt.sample_size) doc["clustering"]["sample_size"] = *opt.sample_size;
  Run run;
  run.cfg = parse_config(doc);
  run.resolved = config_to_json(run.cfg);
  run.hash = config_hash(run.resolved);
  run.dir = opt.out;
  run.jobs = opt.jobs;
  if (opt.jobs < 1) throw ConfigError("--jobs must be at least 1");
  return run;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Deep kernel learning for longitudinal visual acuity: trajgp <command> --config FILE"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "write a planted synthetic cohort and its archetype labels"},
      {"preprocess", "split patients, fit normalization and encode features"},
      {"train", "train the feature extractor and GP (or MLE) head"},
      {"evaluate", "score the checkpoint on the test split (optionally the multi-seed protocol)"},
      {"cluster", "profile trajectories, compare clusterings and measure stability"},
      {"ablate", "retrain with each feature group removed"},
      {"importance", "permutation importance of feature groups on the test split"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "JSON experiment configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "override the run seed");
    sub->add_option("--out", opt.out, "run directory")->capture_default_str();
    sub->add_option("--jobs", opt.jobs, "parallel jobs for seeds and clustering runs")->capture_default_str();
    sub->add_option("--set", opt.overrides, "override a configuration key, e.g. train.epochs=5");
    sub->add_option("--arch", opt.arch, "extractor architecture (rnn, gru, lstm, transformer)");
    if (name == "train") sub->add_flag("--resume", opt.resume, "reuse the checkpoint if the configuration hash matches");
    if (name == "cluster") sub->add_option("--sample-size", opt.sample_size, "cluster a seeded sample of patients");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const std::string started = utc_now();
    Run run = prepare_run(opt);
    fs::create_directories(run.dir);
    spdlog::info("{}: config {} seed {}", command, run.hash.substr(0, 12), run.cfg.seed);
    int code = kOk;
    if (command == "generate") cmd_generate(run);
    else if (command == "preprocess") cmd_preprocess(run);
    else if (command == "train") code = cmd_train(run, opt.resume);
    else if (command == "evaluate") code = cmd_evaluate(run);
    else if (command == "cluster") cmd_cluster(run);
    else if (command == "ablate") cmd_ablate(run);
    else if (command == "importance") cmd_importance(run);
    record_command(run, command, started);
    return code;
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
}
