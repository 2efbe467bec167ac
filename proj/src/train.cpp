#include "flowgen/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "flowgen/errors.hpp"
#include "flowgen/random.hpp"

namespace flowgen {

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cull;
constexpr std::uint64_t kValidationStream = 0x76616cull;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ull;
constexpr std::uint64_t kAugmentStream = 0x6175676dull;
constexpr std::uint64_t kShuffleStream = 0x73687566ull;

}  // namespace

void TrainConfig::validate(std::size_t train_size) const {
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (static_cast<std::size_t>(batch_size) > train_size) {
    throw ValidationError("batch size " + std::to_string(batch_size) + " exceeds the " + std::to_string(train_size) +
                          " training samples");
  }
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(lambda_recon >= 0.0) || !(lambda_kl >= 0.0) || (lambda_recon == 0.0 && lambda_kl == 0.0)) {
    throw ValidationError("loss weights must be non-negative and not both zero");
  }
  if (!(clip_norm > 0.0)) throw ValidationError("clip norm must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("validation fraction must lie in [0, 1)");
  }
  if (checkpoint_every < 0) throw ValidationError("checkpoint cadence must be non-negative");
  augmentation.validate();
}

std::uint64_t model_seed(std::uint64_t run_seed) { return derive_seed(run_seed, kModelStream); }
std::uint64_t validation_seed(std::uint64_t run_seed) { return derive_seed(run_seed, kValidationStream); }

std::string format_metrics(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch %d total %.6f recon %.6f kl %.6f val_mepe %.6f", m.epoch, m.total, m.recon,
                m.kl, m.val_mepe);
  return buf;
}

SplitDataset split_dataset(std::vector<AnnotatedSample> samples, double validation_fraction) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("validation fraction must lie in [0, 1)");
  }
  const auto n = samples.size();
  auto n_val = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * validation_fraction - 1e-9));
  if (n_val >= n) throw ValidationError("validation split leaves no training samples");
  SplitDataset split;
  split.validation.assign(std::make_move_iterator(samples.end() - static_cast<std::ptrdiff_t>(n_val)),
                          std::make_move_iterator(samples.end()));
  samples.resize(n - n_val);
  split.train = std::move(samples);
  return split;
}

Batch make_batch(const std::vector<AnnotatedSample>& samples, const std::vector<std::size_t>& indices) {
  std::vector<const Volume*> frames;
  std::vector<const FlowField*> flows;
  for (std::size_t i : indices) {
    frames.push_back(&samples.at(i).es);
    flows.push_back(&samples.at(i).flow);
  }
  return {to_tensor(std::span<const Volume* const>(frames)), to_tensor(std::span<const FlowField* const>(flows))};
}

Trainer::Trainer(CvaeModel<float>& model, const FpnExtractor<float>& fpn, TrainConfig config)
    : model_(model),
      fpn_(fpn),
      config_(std::move(config)),
      params_(model.parameters()),
      adam_(params_, AdamConfig{config_.learning_rate}),
      shuffle_rng_(derive_seed(config_.seed, kShuffleStream)) {
  if (!fpn_.frozen()) throw ContractError("the feature extractor must be frozen before CVAE training");
}

EpochMetrics Trainer::run_epoch(const std::vector<AnnotatedSample>& train,
                                const std::vector<AnnotatedSample>& validation) {
  config_.validate(train.size());
  if (validation.empty()) throw ValidationError("validation set is empty");
  const int epoch = epoch_ + 1;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), shuffle_rng_);

  const auto batch = static_cast<std::size_t>(config_.batch_size);
  const std::size_t batches = train.size() / batch;
  EpochMetrics metrics;
  metrics.epoch = epoch;
  std::vector<AnnotatedSample> members(batch);
  std::vector<std::size_t> local(batch);
  std::iota(local.begin(), local.end(), std::size_t{0});
  for (std::size_t b = 0; b < batches; ++b) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t idx = order[b * batch + i];
      members[i] = config_.augment ? augment(train[idx], config_.augmentation,
                                             derive_seed(config_.seed ^ kAugmentStream,
                                                         static_cast<std::uint64_t>(epoch), idx))
                                   : train[idx];
    }
    const Batch data = make_batch(members, local);
    const Conditioning<float> cond = fpn_.condition(data.frames);
    LatentCode<float> code = model_.encode(data.flows, cond);
    code = reparameterize(code, derive_seed(config_.seed ^ kNoiseStream, static_cast<std::uint64_t>(epoch), b));
    const Tensor recon = model_.decode(code.sample, cond);
    const LossTerms<float> loss = cvae_loss(data.flows, recon, code, config_.lambda_recon, config_.lambda_kl);
    adam_.zero_grad();
    loss.total.backward();
    clip_gradients(params_, config_.clip_norm);
    adam_.step();
    metrics.total += loss.total.item();
    metrics.recon += loss.recon.item();
    metrics.kl += loss.kl.item();
  }
  if (batches > 0) {
    metrics.total /= static_cast<double>(batches);
    metrics.recon /= static_cast<double>(batches);
    metrics.kl /= static_cast<double>(batches);
  }
  metrics.val_mepe = evaluate(model_, fpn_, validation, validation_seed(config_.seed), config_.batch_size).mean;
  epoch_ = epoch;
  return metrics;
}

std::vector<EpochMetrics> Trainer::fit(const std::vector<AnnotatedSample>& train,
                                       const std::vector<AnnotatedSample>& validation, std::ostream* log,
                                       const std::filesystem::path& checkpoint_path) {
  config_.validate(train.size());
  std::vector<EpochMetrics> history;
  while (epoch_ < config_.epochs) {
    history.push_back(run_epoch(train, validation));
    if (log) {
      *log << format_metrics(history.back()) << '\n';
      log->flush();
    }
    const bool cadence = config_.checkpoint_every > 0 && epoch_ % config_.checkpoint_every == 0;
    if (!checkpoint_path.empty() && (cadence || epoch_ == config_.epochs)) {
      save_checkpoint(checkpoint_path, checkpoint(config_echo_));
    }
  }
  return history;
}

Checkpoint Trainer::checkpoint(const std::string& config_text) const {
  Checkpoint ckpt;
  ckpt.tensors = snapshot(fpn_.parameters());
  for (auto& t : snapshot(params_)) ckpt.tensors.push_back(std::move(t));
  ckpt.moments = adam_.moments();
  ckpt.adam_step = adam_.steps();
  std::ostringstream rng;
  rng << shuffle_rng_;
  ckpt.rng_state = rng.str();
  ckpt.epoch = static_cast<std::uint64_t>(epoch_);
  ckpt.config = config_text;
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  restore_parameters(ckpt.tensors, params_);
  adam_.restore(ckpt.moments, ckpt.adam_step);
  std::istringstream rng(ckpt.rng_state);
  rng >> shuffle_rng_;
  if (rng.fail()) throw FormatError("checkpoint holds an unreadable rng state");
  epoch_ = static_cast<int>(ckpt.epoch);
}

EvaluationReport evaluate(const CvaeModel<float>& model, const FpnExtractor<float>& fpn,
                          const std::vector<AnnotatedSample>& samples, std::uint64_t seed, int batch_size) {
  if (batch_size < 1) throw ValidationError("evaluation batch size must be at least 1");
  NoGradGuard no_grad;
  EvaluationReport report;
  const auto batch = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<std::size_t> indices(end - start);
    std::iota(indices.begin(), indices.end(), start);
    const Batch data = make_batch(samples, indices);
    const Conditioning<float> cond = fpn.condition(data.frames);
    const LatentCode<float> code = model.encode(data.flows, cond);

    // Per-sample noise keeps results independent of the batch size.
    Shape one = code.mu.shape();
    one[0] = 1;
    std::vector<float> eps;
    for (std::size_t i : indices) {
      const Tensor e = standard_normal<float>(one, derive_seed(seed, i));
      eps.insert(eps.end(), e.data().begin(), e.data().end());
    }
    const LatentCode<float> drawn = reparameterize(code, Tensor::from_data(code.mu.shape(), std::move(eps)));
    const Tensor recon = model.decode(drawn.sample, cond);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const FlowField pred = flow_from_tensor(recon, static_cast<int>(i));
      report.samples.push_back({indices[i], mepe(pred, samples[indices[i]].flow)});
    }
  }
  if (!report.samples.empty()) {
    double sum = 0.0;
    for (const auto& s : report.samples) sum += s.epe.mean;
    report.mean = sum / static_cast<double>(report.samples.size());
    double sq = 0.0;
    for (const auto& s : report.samples) sq += (s.epe.mean - report.mean) * (s.epe.mean - report.mean);
    report.std = std::sqrt(sq / static_cast<double>(report.samples.size()));
  }
  return report;
}

double zero_flow_mepe(const std::vector<AnnotatedSample>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) sum += mepe(FlowField(s.flow.extent()), s.flow).mean;
  return sum / static_cast<double>(samples.size());
}

std::vector<FoldResult> leave_one_out(const std::vector<AnnotatedSample>& samples, const FpnExtractor<float>& fpn,
                                      const ModelConfig& model_config, const TrainConfig& config, int max_folds) {
  if (samples.size() < 2) throw ValidationError("leave-one-out needs at least 2 samples");
  if (max_folds < 0) throw ValidationError("fold cap must be non-negative");
  const int folds = max_folds == 0 ? static_cast<int>(samples.size())
                                   : std::min(max_folds, static_cast<int>(samples.size()));
  std::vector<FoldResult> out;
  for (int f = 0; f < folds; ++f) {
    std::vector<AnnotatedSample> train;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (i != static_cast<std::size_t>(f)) train.push_back(samples[i]);
    }
    const std::vector<AnnotatedSample> held{samples[static_cast<std::size_t>(f)]};
    TrainConfig fold_cfg = config;
    fold_cfg.seed = config.seed + static_cast<std::uint64_t>(f);
    CvaeModel<float> model(model_config, model_seed(fold_cfg.seed));
    Trainer trainer(model, fpn, fold_cfg);
    trainer.fit(train, held);
    const auto report = evaluate(model, fpn, held, validation_seed(fold_cfg.seed), 1);
    out.push_back({f, static_cast<std::size_t>(f), report.samples.front().epe});
  }
  return out;
}

}  // namespace flowgen
