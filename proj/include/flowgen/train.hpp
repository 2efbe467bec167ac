#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "flowgen/checkpoint.hpp"
#include "flowgen/cvae.hpp"
#include "flowgen/fpn.hpp"
#include "flowgen/optim.hpp"
#include "flowgen/phantom.hpp"
#include "flowgen/warp.hpp"

namespace flowgen {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double lambda_recon = 0.95;
  double lambda_kl = 0.05;
  double clip_norm = 0.75;
  std::uint64_t seed = 1;
  /// Share of the dataset held out for validation (rounded up).
  double validation_fraction = 0.1;
  /// Write a checkpoint every n epochs; 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  bool augment = true;
  AugmentConfig augmentation;

  void validate(std::size_t train_size) const;
};

/// Seed used to initialise CVAE weights for a run seed.
std::uint64_t model_seed(std::uint64_t run_seed);
/// Seed of the fixed reparameterisation noise used for validation.
std::uint64_t validation_seed(std::uint64_t run_seed);

struct EpochMetrics {
  int epoch = 0;
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double val_mepe = 0.0;
};

/// `epoch <n> total <f> recon <f> kl <f> val_mepe <f>` with six decimals.
std::string format_metrics(const EpochMetrics& m);

struct SplitDataset {
  std::vector<AnnotatedSample> train;
  std::vector<AnnotatedSample> validation;
};

/// The last ceil(n * fraction) samples become the validation set.
SplitDataset split_dataset(std::vector<AnnotatedSample> samples, double validation_fraction);

/// Stacks the members of the selected samples into batch tensors.
struct Batch {
  Tensor frames;  // [B, 1, z, y, x]
  Tensor flows;   // [B, 3, z, y, x]
};
Batch make_batch(const std::vector<AnnotatedSample>& samples, const std::vector<std::size_t>& indices);

class Trainer {
 public:
  /// The extractor must be frozen; the trainer updates only `model`.
  Trainer(CvaeModel<float>& model, const FpnExtractor<float>& fpn, TrainConfig config);

  /// One shuffled pass over `train` (last partial batch dropped) followed by
  /// validation with fixed-seed reparameterisation.
  EpochMetrics run_epoch(const std::vector<AnnotatedSample>& train, const std::vector<AnnotatedSample>& validation);

  /// Runs until `config.epochs` epochs have completed, appending one metrics
  /// line per epoch to `log` and writing `checkpoint_path` at the configured
  /// cadence and after the final epoch.
  std::vector<EpochMetrics> fit(const std::vector<AnnotatedSample>& train,
                                const std::vector<AnnotatedSample>& validation, std::ostream* log = nullptr,
                                const std::filesystem::path& checkpoint_path = {});

  /// Full training state; `config_text` is stored verbatim as the echo.
  Checkpoint checkpoint(const std::string& config_text) const;
  void restore(const Checkpoint& ckpt);

  int epoch() const { return epoch_; }
  const Adam& optimizer() const { return adam_; }
  const TrainConfig& config() const { return config_; }
  /// Text echoed into checkpoints written by fit().
  void set_config_echo(std::string text) { config_echo_ = std::move(text); }

 private:
  CvaeModel<float>& model_;
  const FpnExtractor<float>& fpn_;
  TrainConfig config_;
  ParameterList<float> params_;
  Adam adam_;
  std::mt19937_64 shuffle_rng_;
  int epoch_ = 0;
  std::string config_echo_;
};

struct SampleEvaluation {
  std::size_t index = 0;
  EndpointError epe;
};

struct EvaluationReport {
  /// Mean and population standard deviation of the per-sample mEPE column.
  double mean = 0.0;
  double std = 0.0;
  std::vector<SampleEvaluation> samples;
};

/// Encodes each ground-truth flow with its condition, reparameterises with
/// noise seeded by (seed, sample index), decodes and scores against the
/// ground truth.
EvaluationReport evaluate(const CvaeModel<float>& model, const FpnExtractor<float>& fpn,
                          const std::vector<AnnotatedSample>& samples, std::uint64_t seed, int batch_size = 8);

/// Mean endpoint error of predicting zero motion everywhere.
double zero_flow_mepe(const std::vector<AnnotatedSample>& samples);

struct FoldResult {
  int fold = 0;
  std::size_t held_out = 0;
  EndpointError epe;
};

/// Fold f trains a fresh model with seed `config.seed + f` on every sample
/// but sample f and evaluates on sample f. At most `max_folds` folds run
/// (0 means all).
std::vector<FoldResult> leave_one_out(const std::vector<AnnotatedSample>& samples, const FpnExtractor<float>& fpn,
                                      const ModelConfig& model_config, const TrainConfig& config, int max_folds = 0);

}  // namespace flowgen
