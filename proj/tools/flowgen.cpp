#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "flowgen/checkpoint.hpp"
#include "flowgen/config.hpp"
#include "flowgen/errors.hpp"
#include "flowgen/fpn_pretrain.hpp"
#include "flowgen/generate.hpp"
#include "flowgen/phantom.hpp"
#include "flowgen/random.hpp"
#include "flowgen/train.hpp"
#include "flowgen/warp.hpp"

namespace fs = std::filesystem;
using namespace flowgen;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct GlobalOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 0;
  std::vector<std::string> overrides;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

RunConfig resolve(const GlobalOptions& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = load_config(g.config_path);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + o + "'");
    try {
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("--set: ") + e.what());
    }
  }
  if (g.seed_opt->count() > 0) cfg.seed = g.seed;
  if (g.threads_opt->count() > 0) cfg.threads = g.threads;
  cfg.sync();
  cfg.validate();
  omp_set_num_threads(cfg.threads);
  return cfg;
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const fs::path path = dir / "resolved_config.txt";
  std::ofstream out(path);
  out << cfg.to_text();
  if (!out) throw IoError("cannot write " + path.string());
}

fs::path parent_or_cwd(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

SplitDataset load_split(const fs::path& manifest, const RunConfig& cfg) {
  return split_dataset(load_dataset(manifest), cfg.train.validation_fraction);
}

int cmd_phantom(const RunConfig& cfg, const fs::path& out) {
  echo_config(out, cfg);
  const auto manifest = make_dataset(out, cfg.dataset_size, cfg.phantom, cfg.jitter, cfg.seed);
  const auto samples = load_dataset(manifest);
  double magnitude = 0.0;
  for (const auto& s : samples) magnitude += flow_stats(s.flow).mean_magnitude;
  std::printf("wrote %zu samples to %s (mean flow magnitude %.4f voxels)\n", samples.size(), manifest.c_str(),
              magnitude / static_cast<double>(samples.size()));
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const fs::path& data, const fs::path& out) {
  echo_config(parent_or_cwd(out), cfg);
  const auto split = load_split(data, cfg);
  FpnExtractor<float> fpn(cfg.fpn, fpn_seed(cfg.seed));
  ProxyHeads heads(cfg.fpn, derive_seed(fpn_seed(cfg.seed), 1));
  std::printf("proxy loss before %.6f\n", proxy_loss(fpn, heads, split.train));
  const auto losses = pretrain_fpn(fpn, heads, split.train, cfg.pretrain);
  for (std::size_t e = 0; e < losses.size(); ++e) std::printf("pretrain epoch %zu loss %.6f\n", e + 1, losses[e]);
  Checkpoint ckpt;
  ckpt.tensors = snapshot(fpn.parameters());
  ckpt.config = cfg.to_text();
  save_checkpoint(out, ckpt);
  std::printf("saved frozen extractor to %s\n", out.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& fpn_path, const fs::path& out,
              const fs::path& resume) {
  echo_config(out, cfg);
  const auto split = load_split(data, cfg);
  const FpnExtractor<float> fpn = restore_fpn(load_checkpoint(fpn_path), cfg.fpn);
  CvaeModel<float> model(cfg.model, model_seed(cfg.seed));
  Trainer trainer(model, fpn, cfg.train);
  trainer.set_config_echo(cfg.to_text());
  if (!resume.empty()) {
    trainer.restore(load_checkpoint(resume));
    std::printf("resumed at epoch %d\n", trainer.epoch());
  }
  std::printf("train %zu, validation %zu, zero-flow mEPE %.6f\n", split.train.size(), split.validation.size(),
              zero_flow_mepe(split.validation));
  std::ofstream log(out / "train.log", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + (out / "train.log").string());
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    Tee(std::streambuf* x, std::streambuf* y) : a(x), b(y) {}
    int overflow(int c) override {
      if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
      const char ch = traits_type::to_char_type(c);
      const bool ok = !traits_type::eq_int_type(a->sputc(ch), traits_type::eof()) &&
                      !traits_type::eq_int_type(b->sputc(ch), traits_type::eof());
      return ok ? c : traits_type::eof();
    }
    int sync() override { return a->pubsync() | b->pubsync(); }
  } tee(log.rdbuf(), std::cout.rdbuf());
  std::ostream both(&tee);
  trainer.fit(split.train, split.validation, &both, out / "model.ckpt");
  std::printf("saved %s\n", (out / "model.ckpt").c_str());
  return 0;
}

int cmd_evaluate(const RunConfig& base, const fs::path& ckpt_path, const fs::path& data, const fs::path& out,
                 bool all) {
  echo_config(out, base);
  const LoadedModel loaded = load_model(ckpt_path);
  auto samples = load_dataset(data);
  if (!all) samples = split_dataset(std::move(samples), loaded.config.train.validation_fraction).validation;
  const auto report = evaluate(loaded.model, loaded.fpn, samples, validation_seed(base.seed));
  auto tsv = open_output(out / "evaluation.tsv");
  tsv << "index\tmepe\tstd\n";
  for (const auto& s : report.samples) tsv << s.index << '\t' << s.epe.mean << '\t' << s.epe.std << '\n';
  double magnitude = 0.0;
  for (const auto& s : samples) magnitude += flow_stats(s.flow).mean_magnitude;
  magnitude /= static_cast<double>(samples.size());
  std::printf("samples %zu mEPE %.6f std %.6f zero-flow %.6f mean magnitude %.6f\n", samples.size(), report.mean,
              report.std, zero_flow_mepe(samples), magnitude);
  return 0;
}

int cmd_loo(const RunConfig& cfg, const fs::path& data, const fs::path& fpn_path, const fs::path& out) {
  echo_config(out, cfg);
  const auto samples = load_dataset(data);
  const FpnExtractor<float> fpn = restore_fpn(load_checkpoint(fpn_path), cfg.fpn);
  const auto folds = leave_one_out(samples, fpn, cfg.model, cfg.train, cfg.loo_max_folds);
  auto tsv = open_output(out / "loo.tsv");
  tsv << "fold\theld_out\tmepe\tstd\n";
  double sum = 0.0;
  for (const auto& f : folds) {
    tsv << f.fold << '\t' << f.held_out << '\t' << f.epe.mean << '\t' << f.epe.std << '\n';
    std::printf("fold %d held_out %zu mEPE %.6f\n", f.fold, f.held_out, f.epe.mean);
    sum += f.epe.mean;
  }
  std::printf("mean over %zu folds %.6f\n", folds.size(), sum / static_cast<double>(folds.size()));
  return 0;
}

int cmd_generate(const RunConfig& cfg, GenerationRequest req) {
  echo_config(req.output_dir, cfg);
  req.seed = cfg.seed;
  const auto manifest = run_generation(req);
  for (const auto& s : load_dataset(manifest)) {
    std::printf("%s warp consistency %.3g mean |flow| %.4f\n", s.source.c_str(), warp_consistency(s.es, s.ed, s.flow),
                flow_stats(s.flow).mean_magnitude);
  }
  std::printf("manifest %s\n", manifest.c_str());
  return 0;
}

int cmd_interpolate(const RunConfig& cfg, const fs::path& ckpt_path, const fs::path& condition_path,
                    const fs::path& out, int steps, const std::string& mode, const std::vector<std::string>& anchors) {
  echo_config(out, cfg);
  const LoadedModel loaded = load_model(ckpt_path);
  const Volume condition = read_volume(condition_path);
  LatentTrajectory traj;
  traj.steps = steps;
  if (mode == "line") {
    traj.mode = TrajectoryMode::line;
  } else if (mode == "plane") {
    traj.mode = TrajectoryMode::plane;
  } else {
    throw ValidationError("mode must be line or plane, got '" + mode + "'");
  }
  const std::size_t needed = traj.mode == TrajectoryMode::line ? 2 : 3;
  if (!anchors.empty() && anchors.size() != needed) {
    throw ValidationError(mode + " mode takes " + std::to_string(needed) + " anchors, got " +
                          std::to_string(anchors.size()));
  }
  std::vector<Tensor> z;
  for (std::size_t i = 0; i < needed; ++i) {
    z.push_back(anchors.empty() ? latent_draw(loaded.model, condition, cfg.seed, static_cast<int>(i))
                                : read_latent(anchors[i]));
    write_latent(out / ("anchor_" + std::string(1, static_cast<char>('a' + i)) + ".vol"), z.back());
  }
  traj.z_a = z[0];
  traj.z_b = z[1];
  if (needed == 3) traj.z_c = z[2];
  const auto result = interpolate(loaded.model, loaded.fpn, condition, traj);
  for (std::size_t i = 0; i < result.samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "interp_%04zu", i);
    write_volume(out / (std::string(stem) + "_ed.vol"), result.samples[i].ed);
    write_flow(out / (std::string(stem) + "_flow.vol"), result.samples[i].flow);
  }
  auto tsv = open_output(out / "steps.tsv");
  tsv << "row\tstep\tmepe\n";
  const auto per_row = static_cast<std::size_t>(steps - 1);
  for (std::size_t i = 0; i < result.step_mepe.size(); ++i) {
    tsv << i / per_row << '\t' << i % per_row << '\t' << result.step_mepe[i] << '\n';
    std::printf("row %zu step %zu mEPE %.6f\n", i / per_row, i % per_row, result.step_mepe[i]);
  }
  std::printf("endpoint mEPE %.6f\n", result.endpoint_mepe);
  return 0;
}

int cmd_render(const RunConfig& cfg, const fs::path& input, const std::string& axis, int index, const fs::path& out) {
  echo_config(parent_or_cwd(out), cfg);
  const GridFile grid = read_grid(input);
  SliceImage img;
  if (grid.channels == 1) {
    img = slice_image(Volume(grid.extent, grid.values), parse_axis(axis), index);
  } else if (grid.channels == 3) {
    img = slice_image(FlowField(grid.extent, grid.values), parse_axis(axis), index);
  } else {
    throw ValidationError("can only render 1-channel volumes or 3-channel flows, got " +
                          std::to_string(grid.channels) + " channels");
  }
  write_slice(out, img);
  std::printf("wrote %s (%dx%d, range %g to %g)\n", out.c_str(), img.width, img.height, img.min, img.max);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional flow-field generator for volumetric frames"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  g.seed_opt = app.add_option("--seed", g.seed, "run seed");
  g.threads_opt = app.add_option("--threads", g.threads, "OpenMP worker threads");
  app.add_option("--set", g.overrides, "extra key=value override (repeatable)");

  std::string out, data, fpn, checkpoint, condition, resume, input, axis = "z", mode = "line";
  std::vector<std::string> z_files;
  int count = 5, steps = 10, index = -1;
  bool all = false;

  auto* phantom = app.add_subcommand("phantom", "write a phantom dataset");
  phantom->add_option("--out", out, "output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain-fpn", "pretrain and freeze the feature extractor");
  pretrain->add_option("--data", data, "dataset manifest")->required();
  pretrain->add_option("--out", out, "checkpoint to write")->required();

  auto* train = app.add_subcommand("train", "train the CVAE against a frozen extractor");
  train->add_option("--data", data, "dataset manifest")->required();
  train->add_option("--fpn", fpn, "pretrained extractor checkpoint")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("evaluate", "reconstruction mEPE on the validation split");
  eval->add_option("--checkpoint", checkpoint, "trained model")->required();
  eval->add_option("--data", data, "dataset manifest")->required();
  eval->add_option("--out", out, "output directory")->required();
  eval->add_flag("--all", all, "score every sample instead of the validation split");

  auto* loo = app.add_subcommand("loo", "leave-one-out evaluation");
  loo->add_option("--data", data, "dataset manifest")->required();
  loo->add_option("--fpn", fpn, "pretrained extractor checkpoint")->required();
  loo->add_option("--out", out, "output directory")->required();

  auto* gen = app.add_subcommand("generate", "sample flows for a condition frame");
  gen->add_option("--checkpoint", checkpoint, "trained model")->required();
  gen->add_option("--condition", condition, "condition frame (VOLF3D)")->required();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of prior draws");
  gen->add_option("--z", z_files, "fixed latent grids instead of prior draws");

  auto* interp = app.add_subcommand("interpolate", "decode along a latent line or plane");
  interp->add_option("--checkpoint", checkpoint, "trained model")->required();
  interp->add_option("--condition", condition, "condition frame (VOLF3D)")->required();
  interp->add_option("--out", out, "output directory")->required();
  interp->add_option("--steps", steps, "points per row");
  interp->add_option("--mode", mode, "line or plane");
  interp->add_option("--anchor", z_files, "anchor latent files (2 for line, 3 for plane)");

  auto* render = app.add_subcommand("render", "write one slice as PGM/PPM");
  render->add_option("--input", input, "volume or flow file")->required();
  render->add_option("--axis", axis, "x, y or z");
  render->add_option("--index", index, "slice index (default: middle)");
  render->add_option("--out", out, "image path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const RunConfig cfg = resolve(g);
    if (phantom->parsed()) return cmd_phantom(cfg, out);
    if (pretrain->parsed()) return cmd_pretrain(cfg, data, out);
    if (train->parsed()) return cmd_train(cfg, data, fpn, out, resume);
    if (eval->parsed()) return cmd_evaluate(cfg, checkpoint, data, out, all);
    if (loo->parsed()) return cmd_loo(cfg, data, fpn, out);
    if (gen->parsed()) {
      GenerationRequest req;
      req.condition = condition;
      req.checkpoint = checkpoint;
      req.count = count;
      req.output_dir = out;
      req.fixed_z.assign(z_files.begin(), z_files.end());
      return cmd_generate(cfg, req);
    }
    if (interp->parsed()) return cmd_interpolate(cfg, checkpoint, condition, out, steps, mode, z_files);
    if (render->parsed()) {
      if (index < 0) {
        const auto e = read_grid(input).extent;
        index = (axis == "x" ? e.x : axis == "y" ? e.y : e.z) / 2;
      }
      return cmd_render(cfg, input, axis, index, out);
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return 0;
}
