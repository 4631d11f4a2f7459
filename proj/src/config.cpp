#include "surt/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "surt/errors.h"

namespace surt {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename I>
I parse_int(const std::string& key, const std::string& text) {
  I v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected an integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename I, typename Sel>
Field int_field(std::string key, Sel sel) {
  return {key, [sel](const ExperimentConfig& c) { return std::to_string(sel(c)); },
          [sel, key](ExperimentConfig& c, const std::string& v) { sel(c) = parse_int<I>(key, v); }};
}

template <typename Sel>
Field double_field(std::string key, Sel sel) {
  return {key, [sel](const ExperimentConfig& c) { return format_double(sel(c)); },
          [sel, key](ExperimentConfig& c, const std::string& v) { sel(c) = parse_double(key, v); }};
}

template <typename Sel>
Field bool_field(std::string key, Sel sel) {
  return {key, [sel](const ExperimentConfig& c) { return std::string(sel(c) ? "true" : "false"); },
          [sel, key](ExperimentConfig& c, const std::string& v) { sel(c) = parse_bool(key, v); }};
}

template <typename Sel>
Field string_field(std::string key, Sel sel) {
  return {key, [sel](const ExperimentConfig& c) { return sel(c); },
          [sel](ExperimentConfig& c, const std::string& v) { sel(c) = v; }};
}

#define SEL(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  using u64 = std::uint64_t;
  using sz = std::size_t;
  static const std::vector<Field> table = {
      int_field<sz>("data.n_train", SEL(data.n_train)),
      int_field<sz>("data.n_dev", SEL(data.n_dev)),
      int_field<sz>("data.n_eval", SEL(data.n_eval)),
      int_field<sz>("data.feature_dim", SEL(data.feature_dim)),
      int_field<int>("data.vocab", SEL(data.vocab)),
      int_field<int>("data.min_tokens", SEL(data.min_tokens)),
      int_field<int>("data.max_tokens", SEL(data.max_tokens)),
      int_field<int>("data.dur_min", SEL(data.dur_min)),
      int_field<int>("data.dur_max", SEL(data.dur_max)),
      int_field<int>("data.pad_min", SEL(data.pad_min)),
      int_field<int>("data.pad_max", SEL(data.pad_max)),
      int_field<int>("data.min_delay", SEL(data.min_delay)),
      double_field("data.noise", SEL(data.noise)),
      bool_field("data.silence", SEL(data.silence)),
      int_field<int>("data.speakers", SEL(data.speakers)),
      double_field("data.frame_rate", SEL(data.frame_rate)),
      int_field<u64>("data.seed", SEL(data.seed)),
      string_field("model.encoder", SEL(model.encoder)),
      int_field<sz>("model.unmix_dim", SEL(model.unmix_dim)),
      int_field<sz>("model.unmix_layers", SEL(model.unmix_layers)),
      int_field<sz>("model.unmix_kernel", SEL(model.unmix_kernel)),
      int_field<sz>("model.enc_dim", SEL(model.enc_dim)),
      int_field<sz>("model.enc_layers", SEL(model.enc_layers)),
      int_field<sz>("model.pred_dim", SEL(model.pred_dim)),
      int_field<sz>("model.joint_dim", SEL(model.joint_dim)),
      int_field<sz>("model.chunk", SEL(model.chunk)),
      double_field("model.mask_bias_spread", SEL(model.mask_bias_spread)),
      int_field<sz>("train.steps", SEL(train.steps)),
      int_field<sz>("train.batch", SEL(train.batch)),
      double_field("train.lr", SEL(train.lr)),
      double_field("train.beta1", SEL(train.beta1)),
      double_field("train.beta2", SEL(train.beta2)),
      double_field("train.grad_clip", SEL(train.grad_clip)),
      int_field<u64>("train.seed", SEL(train.seed)),
      int_field<sz>("train.log_every", SEL(train.log_every)),
      int_field<sz>("train.warm_steps", SEL(train.warm_steps)),
      bool_field("train.lr_decay", SEL(train.lr_decay)),
      string_field("loss.assignment", SEL(loss.assignment)),
      bool_field("loss.eos", SEL(loss.eos)),
      bool_field("loss.penalty", SEL(loss.penalty)),
      double_field("loss.alpha", SEL(loss.alpha)),
      int_field<int>("loss.t_buffer", SEL(loss.t_buffer)),
      {"eval.thresholds",
       [](const ExperimentConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.eval.thresholds.size(); ++i)
           s += (i ? "," : "") + std::to_string(c.eval.thresholds[i]);
         return s;
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.thresholds.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ','))
           c.eval.thresholds.push_back(parse_int<int>("eval.thresholds", trim(item)));
       }},
  };
  return table;
}

#undef SEL

void require(bool ok, const std::string& key, const std::string& reason) {
  if (!ok) throw ConfigError(key, reason);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

void validate_config(const ExperimentConfig& c) {
  const auto& d = c.data;
  require(d.n_train > 0, "data.n_train", "must be positive");
  require(d.n_dev > 0, "data.n_dev", "must be positive");
  require(d.n_eval > 0, "data.n_eval", "must be positive");
  require(d.feature_dim > 0, "data.feature_dim", "must be positive");
  require(d.vocab > 0, "data.vocab", "must be positive");
  require(d.min_tokens > 0, "data.min_tokens", "must be positive");
  require(d.max_tokens >= d.min_tokens, "data.max_tokens", "must be >= data.min_tokens");
  require(d.dur_min > 0, "data.dur_min", "must be positive");
  require(d.dur_max >= d.dur_min, "data.dur_max", "must be >= data.dur_min");
  require(d.pad_min >= 0, "data.pad_min", "must be non-negative");
  require(d.pad_max >= d.pad_min, "data.pad_max", "must be >= data.pad_min");
  require(d.min_delay > 0, "data.min_delay", "must be positive");
  require(d.min_delay <= d.max_tokens * d.dur_max + 2 * d.pad_max + (d.silence ? 4 * d.max_tokens : 0),
          "data.min_delay", "longer than any first utterance can be");
  require(d.noise >= 0, "data.noise", "must be non-negative");
  require(d.speakers >= 2, "data.speakers", "a mixture needs at least two speakers");
  require(d.frame_rate > 0, "data.frame_rate", "must be positive");

  const auto& m = c.model;
  require(m.encoder == "rnnt" || m.encoder == "tt", "model.encoder", "must be rnnt or tt");
  require(m.unmix_dim > 0, "model.unmix_dim", "must be positive");
  require(m.unmix_layers > 0, "model.unmix_layers", "must be positive");
  require(m.unmix_kernel > 0, "model.unmix_kernel", "must be positive");
  require(m.enc_dim > 0, "model.enc_dim", "must be positive");
  require(m.enc_layers > 0, "model.enc_layers", "must be positive");
  require(m.pred_dim > 0, "model.pred_dim", "must be positive");
  require(m.joint_dim > 0, "model.joint_dim", "must be positive");
  require(m.mask_bias_spread >= 0, "model.mask_bias_spread", "must be non-negative");
  if (m.encoder == "tt")
    require(m.chunk > 0, "model.chunk", "required (>= 1) when model.encoder = tt");
  else
    require(m.chunk == 0, "model.chunk", "only meaningful when model.encoder = tt");

  require(c.train.batch > 0, "train.batch", "must be positive");
  require(c.train.lr >= 0, "train.lr", "must be non-negative");
  require(c.train.beta1 >= 0 && c.train.beta1 < 1, "train.beta1", "must be in [0, 1)");
  require(c.train.beta2 >= 0 && c.train.beta2 < 1, "train.beta2", "must be in [0, 1)");
  require(c.train.grad_clip >= 0, "train.grad_clip", "must be non-negative");
  require(c.train.log_every > 0, "train.log_every", "must be positive");
  require(c.train.warm_steps <= c.train.steps, "train.warm_steps", "must not exceed train.steps");
  require(c.train.warm_steps == 0 || c.loss.eos, "train.warm_steps", "only meaningful with loss.eos");

  require(c.loss.assignment == "heat" || c.loss.assignment == "pit", "loss.assignment",
          "must be heat or pit");
  require(c.loss.alpha >= 0, "loss.alpha", "must be non-negative");
  require(c.loss.t_buffer >= 0, "loss.t_buffer", "must be non-negative");
  require(!c.loss.penalty || c.loss.eos, "loss.penalty", "requires loss.eos = true");

  require(!c.eval.thresholds.empty(), "eval.thresholds", "needs at least one threshold");
  for (int t : c.eval.thresholds) require(t >= 0, "eval.thresholds", "must be non-negative");
}

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.key] = &f;
  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError(key, "unknown key");
    if (seen[key]++) throw ConfigError(key, "duplicate key");
    if (value.empty()) throw ConfigError(key, "missing value");
    it->second->set(cfg, value);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : config_entries(cfg)) out += key + " = " + value + "\n";
  return out;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return config_entries(a) == config_entries(b);
}

}  // namespace surt
