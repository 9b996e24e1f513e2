#pragma once

#include "trajgp/data/dataset.hpp"
#include "trajgp/extractors/extractor.hpp"
#include "trajgp/gp/svgp.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace trajgp {

/// Regression head on top of the extractor.
enum class Head { gp, mle };
std::string to_string(Head h);
Head parse_head(const std::string& name);

struct TrainConfig {
  ExtractorConfig extractor;  // input_dim is taken from the dataset
  Head head = Head::gp;
  Eigen::Index num_inducing = 128;
  Eigen::Index batch_size = 32;
  int epochs = 200;
  double learning_rate = 1e-4;
  double clip_norm = 0.0;
  /// Longest prefix fed to the extractor; longer prefixes keep the most
  /// recent records.
  int max_prefix = 32;
  /// Training samples encoded to seed the k-means inducing-point placement.
  std::size_t warmup_samples = 1024;
  std::uint64_t seed = 42;
  JitterPolicy jitter;

  void validate() const;
};

/// Trained extractor plus head. For the GP head `params` holds "ext.*" and
/// "gp.*"; for the MLE head "ext.*", "mle.w", "mle.b" and the fitted residual
/// variance "mle.var".
struct DklModel {
  ExtractorConfig extractor;
  Head head = Head::gp;
  int max_prefix = 32;
  JitterPolicy jitter;
  ad::ParamStore params;
};

struct TrainLogEntry {
  int epoch = 0;
  /// Mean mini-batch ELBO (GP head) or negative mean squared error (MLE).
  double elbo = 0.0;
  double val_mse = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  DklModel model;  // parameters of the best-validation epoch
  std::vector<TrainLogEntry> log;
  int best_epoch = -1;
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(const TrainLogEntry&)>;

/// Joint mini-batch training of extractor and head. The returned model is
/// the epoch with the lowest validation MSE (the last epoch if there is no
/// validation data). A non-finite loss stops training and returns the best
/// finite checkpoint with `diverged` set.
TrainResult train_dkl(const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct SamplePredictions {
  GaussianPrediction prediction;
  Matrix latents;  // samples x latent_dim
  Vector targets;
};

/// Evaluation-mode predictions for every supervised prefix of `sequences`.
SamplePredictions predict_samples(const DklModel& model, const std::vector<PatientSequence>& sequences);

/// Latents and predictions for every prefix of one sequence (supervised or not).
SamplePredictions predict_sequence(const DklModel& model, const PatientSequence& sequence);

void save_model(const DklModel& model, const std::filesystem::path& path);
DklModel load_model(const std::filesystem::path& path);

}  // namespace trajgp
