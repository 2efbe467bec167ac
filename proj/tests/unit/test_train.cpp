#include <doctest.h>

#include <cmath>
#include <sstream>

#include "flowgen/errors.hpp"
#include "flowgen/train.hpp"

using namespace flowgen;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.fpn_channels = {2, 3};
  m.encoder_channels = {2, 3};
  m.decoder_channels = {3, 2};
  m.latent_channels = 2;
  return m;
}

std::vector<AnnotatedSample> tiny_samples(int n) {
  PhantomSpec s;
  s.extent = 16;
  s.center = {7.5, 7.5, 7.5};
  s.inner_radius = 3.0;
  s.outer_radius = 4.5;
  s.feather = 2.0;
  JitterRanges j;
  j.center = 0.5;
  j.inner_radius = 0.3;
  j.outer_radius = 0.3;
  return generate_samples(n, s, j, 5);
}

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.seed = 9;
  return t;
}

FpnExtractor<float> frozen_fpn() {
  FpnExtractor<float> fpn(FpnConfig{{2, 3}}, 4);
  fpn.freeze();
  return fpn;
}

}  // namespace

TEST_CASE("validation split keeps the tail") {
  const auto samples = tiny_samples(10);
  auto split = split_dataset(samples, 0.1);
  CHECK(split.train.size() == 9);
  CHECK(split.validation.size() == 1);
  CHECK(split.validation[0].es == samples[9].es);
  split = split_dataset(samples, 0.25);
  CHECK(split.validation.size() == 3);
  CHECK(split.train.size() == 7);

  std::vector<AnnotatedSample> many(72, samples[0]);
  split = split_dataset(many, 0.1);
  CHECK(split.train.size() == 64);
  CHECK(split.validation.size() == 8);
  CHECK_THROWS_AS(split_dataset(samples, 1.0), ValidationError);
}

TEST_CASE("metrics line format") {
  EpochMetrics m{3, 0.5, 0.25, 1e-7, 0.1234567};
  CHECK(format_metrics(m) == "epoch 3 total 0.500000 recon 0.250000 kl 0.000000 val_mepe 0.123457");
}

TEST_CASE("batches stack members") {
  const auto samples = tiny_samples(3);
  const auto b = make_batch(samples, {2, 0});
  CHECK(b.frames.shape() == Shape{2, 1, 16, 16, 16});
  CHECK(b.flows.shape() == Shape{2, 3, 16, 16, 16});
  CHECK(b.frames.data()[0] == samples[2].es.values()[0]);
  CHECK(b.flows.data()[3 * 4096] == samples[0].flow.values()[0]);
}

TEST_CASE("trainer requires a frozen extractor") {
  FpnExtractor<float> fpn(FpnConfig{{2, 3}}, 4);
  CvaeModel<float> model(tiny_model(), 1);
  CHECK_THROWS_AS(Trainer(model, fpn, tiny_train(1)), ContractError);
}

TEST_CASE("training is deterministic and resumable") {
  const auto split = split_dataset(tiny_samples(6), 0.2);
  const auto fpn = frozen_fpn();
  const auto fpn_hash = fpn.hash();

  CvaeModel<float> a(tiny_model(), model_seed(9));
  Trainer ta(a, fpn, tiny_train(4));
  std::ostringstream log_a;
  const auto full = ta.fit(split.train, split.validation, &log_a);
  REQUIRE(full.size() == 4);
  for (const auto& m : full) {
    CHECK(std::isfinite(m.total));
    CHECK(m.kl >= 0.0);
  }

  CvaeModel<float> b(tiny_model(), model_seed(9));
  Trainer tb(b, fpn, tiny_train(4));
  std::ostringstream log_b;
  tb.fit(split.train, split.validation, &log_b);
  CHECK(log_a.str() == log_b.str());
  CHECK(parameter_hash(a.parameters()) == parameter_hash(b.parameters()));

  CvaeModel<float> c(tiny_model(), model_seed(9));
  Trainer tc(c, fpn, tiny_train(2));
  std::ostringstream log_c;
  tc.fit(split.train, split.validation, &log_c);
  const auto ckpt = tc.checkpoint("echo");
  CHECK(ckpt.epoch == 2);
  CHECK(ckpt.config == "echo");

  CvaeModel<float> d(tiny_model(), 12345);
  Trainer td(d, fpn, tiny_train(4));
  td.restore(ckpt);
  CHECK(td.epoch() == 2);
  td.fit(split.train, split.validation, &log_c);
  CHECK(log_c.str() == log_a.str());
  CHECK(parameter_hash(d.parameters()) == parameter_hash(a.parameters()));
  CHECK(fpn.hash() == fpn_hash);
}

TEST_CASE("evaluation summary is the mean and spread of per-sample errors") {
  const auto samples = tiny_samples(3);
  const auto fpn = frozen_fpn();
  CvaeModel<float> model(tiny_model(), 2);
  const auto r = evaluate(model, fpn, samples, 1, 2);
  REQUIRE(r.samples.size() == 3);
  double mean = 0.0;
  for (const auto& s : r.samples) mean += s.epe.mean;
  mean /= 3.0;
  double var = 0.0;
  for (const auto& s : r.samples) var += (s.epe.mean - mean) * (s.epe.mean - mean);
  CHECK(r.mean == doctest::Approx(mean));
  CHECK(r.std == doctest::Approx(std::sqrt(var / 3.0)));
  const auto again = evaluate(model, fpn, samples, 1, 1);
  for (int i = 0; i < 3; ++i) CHECK(again.samples[i].epe.mean == doctest::Approx(r.samples[i].epe.mean).epsilon(1e-5));

  double zero = 0.0;
  for (const auto& s : samples) zero += flow_stats(s.flow).mean_magnitude;
  CHECK(zero_flow_mepe(samples) == doctest::Approx(zero / 3.0));
}

TEST_CASE("train config validation") {
  auto t = tiny_train(1);
  CHECK_NOTHROW(t.validate(4));
  CHECK_THROWS_AS(t.validate(1), ValidationError);
  t.lambda_kl = -1.0;
  CHECK_THROWS_AS(t.validate(4), ValidationError);
  t = tiny_train(-1);
  CHECK_THROWS_AS(t.validate(4), ValidationError);
}
