#include "flowgen/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "flowgen/errors.hpp"
#include "flowgen/random.hpp"

namespace flowgen {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ValidationError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                        expected);
}

template <typename N>
N parse_number(std::string_view key, std::string_view v, const char* expected) {
  v = trim(v);
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, expected);
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::string_view> split_commas(std::string_view v) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    parts.push_back(trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Binding {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Binding int_binding(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) { member(c) = parse_number<int>(key, v, "an integer"); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Binding u64_binding(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) {
            member(c) = parse_number<std::uint64_t>(key, v, "an unsigned integer");
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Binding double_binding(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) { member(c) = parse_number<double>(key, v, "a number"); },
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Binding bool_binding(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Binding list_binding(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) {
            std::vector<int> out;
            for (auto part : split_commas(v)) out.push_back(parse_number<int>(key, part, "a comma-separated integer list"));
            member(c) = std::move(out);
          },
          [member](const RunConfig& c) {
            std::string s;
            for (int x : member(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + std::to_string(x);
            return s;
          }};
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    b.push_back(u64_binding("seed", [](RunConfig& c) -> auto& { return c.seed; }));
    b.push_back(int_binding("threads", [](RunConfig& c) -> auto& { return c.threads; }));
    b.push_back(int_binding("dataset.size", [](RunConfig& c) -> auto& { return c.dataset_size; }));
    b.push_back(int_binding("loo.max_folds", [](RunConfig& c) -> auto& { return c.loo_max_folds; }));

    b.push_back(int_binding("phantom.extent", [](RunConfig& c) -> auto& { return c.phantom.extent; }));
    b.push_back({"phantom.center",
                 [](RunConfig& c, std::string_view v) {
                   const auto parts = split_commas(v);
                   if (parts.size() != 3) bad_value("phantom.center", v, "three comma-separated numbers");
                   for (std::size_t i = 0; i < 3; ++i) {
                     c.phantom.center[i] = parse_number<double>("phantom.center", parts[i], "a number");
                   }
                 },
                 [](const RunConfig& c) {
                   return format_double(c.phantom.center[0]) + "," + format_double(c.phantom.center[1]) + "," +
                          format_double(c.phantom.center[2]);
                 }});
    b.push_back(double_binding("phantom.inner_radius", [](RunConfig& c) -> auto& { return c.phantom.inner_radius; }));
    b.push_back(double_binding("phantom.outer_radius", [](RunConfig& c) -> auto& { return c.phantom.outer_radius; }));
    b.push_back(double_binding("phantom.feather", [](RunConfig& c) -> auto& { return c.phantom.feather; }));
    b.push_back(double_binding("phantom.elongation", [](RunConfig& c) -> auto& { return c.phantom.elongation; }));
    b.push_back(double_binding("phantom.alpha", [](RunConfig& c) -> auto& { return c.phantom.alpha; }));
    b.push_back(double_binding("phantom.thickening", [](RunConfig& c) -> auto& { return c.phantom.thickening; }));
    b.push_back(double_binding("phantom.twist", [](RunConfig& c) -> auto& { return c.phantom.twist; }));
    b.push_back(double_binding("phantom.noise_floor", [](RunConfig& c) -> auto& { return c.phantom.noise_floor; }));
    b.push_back(u64_binding("phantom.seed", [](RunConfig& c) -> auto& { return c.phantom.seed; }));

    b.push_back(double_binding("jitter.center", [](RunConfig& c) -> auto& { return c.jitter.center; }));
    b.push_back(double_binding("jitter.inner_radius", [](RunConfig& c) -> auto& { return c.jitter.inner_radius; }));
    b.push_back(double_binding("jitter.outer_radius", [](RunConfig& c) -> auto& { return c.jitter.outer_radius; }));
    b.push_back(double_binding("jitter.alpha", [](RunConfig& c) -> auto& { return c.jitter.alpha; }));
    b.push_back(double_binding("jitter.thickening", [](RunConfig& c) -> auto& { return c.jitter.thickening; }));
    b.push_back(double_binding("jitter.twist", [](RunConfig& c) -> auto& { return c.jitter.twist; }));

    b.push_back(list_binding("fpn.channels", [](RunConfig& c) -> auto& { return c.fpn.channels; }));
    b.push_back(list_binding("model.encoder_channels", [](RunConfig& c) -> auto& { return c.model.encoder_channels; }));
    b.push_back(list_binding("model.decoder_channels", [](RunConfig& c) -> auto& { return c.model.decoder_channels; }));
    b.push_back(int_binding("model.latent_channels", [](RunConfig& c) -> auto& { return c.model.latent_channels; }));

    b.push_back(int_binding("pretrain.epochs", [](RunConfig& c) -> auto& { return c.pretrain.epochs; }));
    b.push_back(int_binding("pretrain.batch_size", [](RunConfig& c) -> auto& { return c.pretrain.batch_size; }));
    b.push_back(double_binding("pretrain.learning_rate", [](RunConfig& c) -> auto& { return c.pretrain.learning_rate; }));
    b.push_back(double_binding("pretrain.clip_norm", [](RunConfig& c) -> auto& { return c.pretrain.clip_norm; }));

    b.push_back(int_binding("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    b.push_back(int_binding("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    b.push_back(double_binding("train.learning_rate", [](RunConfig& c) -> auto& { return c.train.learning_rate; }));
    b.push_back(double_binding("train.lambda_recon", [](RunConfig& c) -> auto& { return c.train.lambda_recon; }));
    b.push_back(double_binding("train.lambda_kl", [](RunConfig& c) -> auto& { return c.train.lambda_kl; }));
    b.push_back(double_binding("train.clip_norm", [](RunConfig& c) -> auto& { return c.train.clip_norm; }));
    b.push_back(double_binding("train.validation_fraction",
                               [](RunConfig& c) -> auto& { return c.train.validation_fraction; }));
    b.push_back(int_binding("train.checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));
    b.push_back(bool_binding("train.augment", [](RunConfig& c) -> auto& { return c.train.augment; }));

    b.push_back(double_binding("augment.noise_variance",
                               [](RunConfig& c) -> auto& { return c.train.augmentation.noise_variance; }));
    b.push_back(double_binding("augment.max_shift", [](RunConfig& c) -> auto& { return c.train.augmentation.max_shift; }));
    b.push_back(int_binding("augment.reference_extent",
                            [](RunConfig& c) -> auto& { return c.train.augmentation.reference_extent; }));
    b.push_back(double_binding("augment.zoom_min", [](RunConfig& c) -> auto& { return c.train.augmentation.zoom_min; }));
    b.push_back(double_binding("augment.zoom_max", [](RunConfig& c) -> auto& { return c.train.augmentation.zoom_max; }));
    return b;
  }();
  return table;
}

}  // namespace

std::uint64_t fpn_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 0x66706eull); }

void RunConfig::sync() {
  model.fpn_channels = fpn.channels;
  train.seed = seed;
  pretrain.seed = seed;
}

void RunConfig::validate() const {
  if (threads < 1) throw ValidationError("threads must be at least 1");
  if (dataset_size < 1) throw ValidationError("dataset.size must be at least 1");
  if (loo_max_folds < 0) throw ValidationError("loo.max_folds must be non-negative");
  phantom.validate();
  fpn.validate();
  model.validate();
  if (model.fpn_channels != fpn.channels) throw ValidationError("model and pyramid channel lists disagree");
  train.augmentation.validate();
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& b : bindings()) {
    if (b.key == key) {
      b.set(*this, value);
      sync();
      return;
    }
  }
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& b : bindings()) out += b.key + " = " + b.get(*this) + "\n";
  return out;
}

RunConfig parse_config(std::string_view text, const std::string& origin, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      base.set(trim(v.substr(0, eq)), trim(v.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.sync();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), std::move(base));
}

}  // namespace flowgen
