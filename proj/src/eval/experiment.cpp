#include "trajgp/eval/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace trajgp {

using nlohmann::json;

namespace {

MetricReport evaluate_model(const DklModel& model, const Dataset& data) {
  const SamplePredictions p = predict_samples(model, data.test);
  return evaluate_predictions(p.prediction, p.targets);
}

MetricReport evaluate_baseline(const Dataset& data) {
  const Vector train_y = sample_targets(data.train, enumerate_samples(data.train));
  const Vector test_y = sample_targets(data.test, enumerate_samples(data.test));
  return evaluate_predictions(constant_prediction(train_y, test_y.size()), test_y);
}

std::string pad_left(const std::string& s, std::size_t w) { return std::string(w - std::min(w, s.size()), ' ') + s; }

std::string render_table(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c == 0) out << cells[r][c] << std::string(width[0] - cells[r][c].size(), ' ');
      else out << "  " << pad_left(cells[r][c], width[c]);
    }
    out << '\n';
    if (r == 0) out << std::string(std::accumulate(width.begin(), width.end(), 2 * (width.size() - 1)), '-') << '\n';
  }
  return out.str();
}

}  // namespace

SeedOutcome run_single_seed(const std::vector<RawEncounter>& encounters, const PreprocessConfig& preprocess,
                            TrainConfig train, std::uint64_t seed, std::optional<std::uint64_t> forced_split_seed) {
  PreprocessConfig pc = preprocess;
  pc.split_seed = forced_split_seed.value_or(seed);
  const Dataset data = build_dataset(encounters, pc);
  train.seed = seed;
  const TrainResult r = train_dkl(data, train);
  SeedOutcome out;
  out.seed = seed;
  out.model = evaluate_model(r.model, data);
  out.baseline = evaluate_baseline(data);
  out.diverged = r.diverged;
  out.best_epoch = r.best_epoch;
  return out;
}

SeedProtocolResult run_seed_protocol(const std::vector<std::uint64_t>& seeds, const SeedRunner& runner, int jobs) {
  if (seeds.empty()) throw ConfigError("seed protocol needs at least one seed");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  const std::size_t n = seeds.size();
  std::vector<std::optional<SeedOutcome>> slots(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto worker = [&] {
    for (std::size_t i = next++; i < n && !failed.load(); i = next++) {
      try {
        slots[i] = runner(seeds[i]);
      } catch (const std::exception& e) {
        errors[i] = "seed " + std::to_string(seeds[i]) + ": " + e.what();
        failed = true;
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SeedProtocolResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) result.completed.push_back(*slots[i]);
    if (!errors[i].empty() && !result.failure) result.failure = errors[i];
  }
  if (result.completed.size() >= 2) {
    std::vector<std::uint64_t> done;
    std::vector<MetricReport> model, baseline;
    for (const auto& o : result.completed) {
      done.push_back(o.seed);
      model.push_back(o.model);
      baseline.push_back(o.baseline);
    }
    result.model = summarize_seeds(done, model);
    result.baseline = summarize_seeds(done, baseline);
  }
  return result;
}

json to_json(const SeedProtocolResult& r) {
  json j;
  json rows = json::array();
  for (const auto& o : r.completed) {
    rows.push_back({{"seed", o.seed},
                    {"model", to_json(o.model)},
                    {"baseline", to_json(o.baseline)},
                    {"diverged", o.diverged},
                    {"best_epoch", o.best_epoch}});
  }
  j["per_seed"] = std::move(rows);
  j["model"] = r.model ? to_json(*r.model) : json(nullptr);
  j["baseline"] = r.baseline ? to_json(*r.baseline) : json(nullptr);
  j["complete"] = !r.failure.has_value();
  if (r.failure) j["failure"] = *r.failure;
  return j;
}

AblationResult ablate_feature_group(const Dataset& data, const TrainConfig& config, const std::string& group) {
  return ablate_feature_groups(data, config, {group}).front();
}

std::vector<AblationResult> ablate_feature_groups(const Dataset& data, const TrainConfig& config,
                                                  const std::vector<std::string>& groups) {
  for (const auto& g : groups) feature_group_columns(data.layout, g);  // reject unknown names before training
  const MetricReport baseline = evaluate_model(train_dkl(data, config).model, data);
  std::vector<AblationResult> rows;
  for (const auto& g : groups) {
    Dataset ablated = data;
    ablate_group(ablated, g);
    rows.push_back({g, baseline, evaluate_model(train_dkl(ablated, config).model, ablated)});
  }
  return rows;
}

json to_json(const std::vector<AblationResult>& rows) {
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"group", r.group},
                 {"baseline", to_json(r.baseline)},
                 {"ablated", to_json(r.ablated)},
                 {"delta_mse", r.delta_mse()}});
  }
  return j;
}

std::string format_ablation_table(const std::vector<AblationResult>& rows) {
  std::vector<std::vector<std::string>> cells{{"Removed group", "MSE", "Delta MSE"}};
  if (!rows.empty()) cells.push_back({"(none)", format_number(rows.front().baseline.mse), format_number(0.0)});
  for (const auto& r : rows) cells.push_back({r.group, format_number(r.ablated.mse), format_number(r.delta_mse())});
  return render_table(cells);
}

ImportanceResult permutation_importance(const DklModel& model, const FeatureLayout& layout,
                                        const std::vector<PatientSequence>& sequences, const std::string& group,
                                        std::uint64_t seed) {
  const std::vector<Eigen::Index> cols = feature_group_columns(layout, group);
  if (model.extractor.input_dim != layout.dim()) throw ShapeError("model input width does not match the layout");

  ImportanceResult out;
  out.group = group;
  {
    const SamplePredictions p = predict_samples(model, sequences);
    out.baseline_mse = (p.prediction.mean - p.targets).squaredNorm() / static_cast<double>(p.targets.size());
  }

  std::vector<std::pair<std::size_t, Eigen::Index>> rows;
  for (std::size_t s = 0; s < sequences.size(); ++s)
    for (Eigen::Index t = 0; t < sequences[s].length(); ++t) rows.emplace_back(s, t);
  std::vector<std::size_t> perm(rows.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, "importance"));
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<PatientSequence> permuted = sequences;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto [ds, dt] = rows[i];
    const auto [ss, st] = rows[perm[i]];
    for (Eigen::Index c : cols) permuted[ds].features(dt, c) = sequences[ss].features(st, c);
  }
  const SamplePredictions p = predict_samples(model, permuted);
  out.permuted_mse = (p.prediction.mean - p.targets).squaredNorm() / static_cast<double>(p.targets.size());
  return out;
}

json to_json(const std::vector<ImportanceResult>& rows) {
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"group", r.group},
                 {"baseline_mse", r.baseline_mse},
                 {"permuted_mse", r.permuted_mse},
                 {"delta_mse", r.delta_mse()}});
  }
  return j;
}

std::string format_importance_table(const std::vector<ImportanceResult>& rows) {
  std::vector<std::vector<std::string>> cells{{"Permuted group", "MSE", "Delta MSE"}};
  for (const auto& r : rows) cells.push_back({r.group, format_number(r.permuted_mse), format_number(r.delta_mse())});
  return render_table(cells);
}

}  // namespace trajgp
