#include "surt/datagen.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "surt/errors.h"

namespace surt::data {

namespace {

// Float-valued JSON so feature values print with the shortest round-trip
// representation of the stored 32-bit value.
using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool,
                                       std::int64_t, std::uint64_t, float>;

constexpr std::uint32_t kPrototypeStream = 0x70726f74;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t tag, std::uint64_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), tag,
                    std::uint32_t(index), std::uint32_t(index >> 32)};
  return std::mt19937_64(seq);
}

int uniform(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::vector<int> draw_tokens(const DataConfig& cfg, std::mt19937_64& rng) {
  const int n = uniform(rng, cfg.min_tokens, cfg.max_tokens);
  std::vector<int> tokens;
  // Adjacent repeats are excluded: two equal prototypes back to back are
  // indistinguishable from one longer token.
  while (int(tokens.size()) < n) {
    const int s = uniform(rng, 1, cfg.vocab);
    if (!tokens.empty() && tokens.back() == s && cfg.vocab > 1) continue;
    tokens.push_back(s);
  }
  return tokens;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::eval: return "eval";
  }
  return "?";
}

Tensor make_prototypes(const DataConfig& cfg, std::uint64_t seed) {
  const std::size_t V = std::size_t(cfg.vocab), D = cfg.feature_dim;
  auto rng = stream_rng(seed, kPrototypeStream, 0);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> rows;
  while (rows.size() < V) {
    std::vector<double> r(D);
    for (auto& v : r) v = normal(rng);
    if (rows.size() < D) {
      for (const auto& q : rows) {
        double dot = 0;
        for (std::size_t i = 0; i < D; ++i) dot += r[i] * q[i];
        for (std::size_t i = 0; i < D; ++i) r[i] -= dot * q[i];
      }
    }
    double norm = 0;
    for (double v : r) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& v : r) v /= norm;
    rows.push_back(std::move(r));
  }
  Tensor out({V, D});
  const double gain = std::sqrt(double(D));
  for (std::size_t s = 0; s < V; ++s)
    for (std::size_t i = 0; i < D; ++i) out.at(s, i) = float(rows[s][i] * gain);
  return out;
}

Utterance render_utterance(const std::vector<int>& tokens, std::mt19937_64& rng,
                           const DataConfig& cfg, const Tensor& prototypes) {
  if (tokens.empty()) throw ArgumentError("cannot render an empty token list");
  const std::size_t D = prototypes.dim(1);
  Utterance u;
  u.tokens = tokens;
  const int lead = uniform(rng, cfg.pad_min, cfg.pad_max);
  std::vector<int> gaps(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int s = tokens[i];
    if (s < 1 || std::size_t(s) > prototypes.dim(0))
      throw ArgumentError("token " + std::to_string(s) + " has no prototype");
    u.durations.push_back(uniform(rng, cfg.dur_min, cfg.dur_max));
    if (cfg.silence && i + 1 < tokens.size() && uniform(rng, 0, 1) == 1)
      gaps[i] = uniform(rng, 2, 4);
  }
  const int trail = uniform(rng, cfg.pad_min, cfg.pad_max);

  std::size_t L = std::size_t(lead + trail);
  for (std::size_t i = 0; i < tokens.size(); ++i) L += std::size_t(u.durations[i] + gaps[i]);
  u.frames = Tensor({L, D});
  std::size_t t = std::size_t(lead);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto proto = prototypes.row(std::size_t(tokens[i] - 1));
    for (int k = 0; k < u.durations[i]; ++k, ++t)
      std::copy(proto.begin(), proto.end(), u.frames.row(t).begin());
    t += std::size_t(gaps[i]);
  }
  u.speech = {lead + 1, int(t - std::size_t(gaps.back()))};
  if (cfg.noise > 0) {
    std::normal_distribution<float> noise(0.0f, float(cfg.noise));
    for (auto& v : u.frames.values()) v += noise(rng);
  }
  return u;
}

MixtureSample mix(const Utterance& u1, const Utterance& u2, int delay, int min_delay,
                  const TokenVocab& vocab) {
  const int L1 = int(u1.length()), L2 = int(u2.length());
  if (delay < min_delay || delay > L1)
    throw ArgumentError("delay " + std::to_string(delay) + " outside [" +
                        std::to_string(min_delay) + ", " + std::to_string(L1) + "]");
  if (u1.speaker == u2.speaker) throw ArgumentError("mixture needs two distinct speakers");
  if (u1.frames.dim(1) != u2.frames.dim(1))
    throw DimensionError("utterance feature dims differ: " + shape_string(u1.frames.shape()) +
                         " vs " + shape_string(u2.frames.shape()));
  const std::size_t D = u1.frames.dim(1);
  const int T = std::max(L1, delay + L2);

  MixtureSample s;
  s.X = Tensor({std::size_t(T), D});
  std::copy(u1.frames.values().begin(), u1.frames.values().end(), s.X.values().begin());
  for (int t = 0; t < L2; ++t) {
    auto dst = s.X.row(std::size_t(delay + t));
    auto src = u2.frames.row(std::size_t(t));
    for (std::size_t i = 0; i < D; ++i) dst[i] += src[i];
  }
  s.delay = delay;
  s.speaker1 = u1.speaker;
  s.speaker2 = u2.speaker;
  s.extent1 = {1, L1};
  s.extent2 = {delay + 1, delay + L2};
  s.speech1 = u1.speech;
  s.speech2 = {u2.speech.first + delay, u2.speech.last + delay};
  s.t_eos1 = s.speech1.last;
  s.t_eos2 = s.speech2.last;
  s.overlap_ratio = double(std::max(0, L1 - delay)) / double(T);
  s.y1 = u1.tokens;
  s.y1.push_back(vocab.eos);
  s.y2 = u2.tokens;
  s.y2.push_back(vocab.eos);
  return s;
}

MixtureSample generate_sample(const DataConfig& cfg, std::uint64_t seed, Split split,
                              std::size_t index, const Tensor& prototypes) {
  auto rng = stream_rng(seed, std::uint32_t(split) + 1, index);
  const auto vocab = TokenVocab::with_symbols(cfg.vocab);
  const int spk1 = uniform(rng, 0, cfg.speakers - 1);
  int spk2 = uniform(rng, 0, cfg.speakers - 2);
  if (spk2 >= spk1) ++spk2;

  // The first utterance must be long enough for the delay range to exist.
  Utterance u1;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000)
      throw ArgumentError("min_delay exceeds every reachable utterance length");
    u1 = render_utterance(draw_tokens(cfg, rng), rng, cfg, prototypes);
    if (int(u1.length()) >= cfg.min_delay) break;
  }
  u1.speaker = spk1;
  Utterance u2 = render_utterance(draw_tokens(cfg, rng), rng, cfg, prototypes);
  u2.speaker = spk2;
  const int delay = uniform(rng, cfg.min_delay, int(u1.length()));
  auto s = mix(u1, u2, delay, cfg.min_delay, vocab);
  char id[32];
  std::snprintf(id, sizeof id, "%s-%06zu", split_name(split), index);
  s.id = id;
  return s;
}

std::vector<MixtureSample> generate_split(const DataConfig& cfg, std::uint64_t seed,
                                          Split split, std::size_t n,
                                          const Tensor& prototypes) {
  std::vector<MixtureSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(generate_sample(cfg, seed, split, i, prototypes));
  return out;
}

Dataset generate_dataset(const DataConfig& cfg, std::uint64_t seed) {
  if (cfg.speakers < 2) throw ArgumentError("need at least two speakers");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens)
    throw ArgumentError("token count range is empty");
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.prototypes = make_prototypes(cfg, seed);
  ds.train = generate_split(cfg, seed, Split::train, cfg.n_train, ds.prototypes);
  ds.dev = generate_split(cfg, seed, Split::dev, cfg.n_dev, ds.prototypes);
  ds.eval = generate_split(cfg, seed, Split::eval, cfg.n_eval, ds.prototypes);
  return ds;
}

namespace {

FloatJson matrix_json(const Tensor& m) {
  FloatJson rows = FloatJson::array();
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    FloatJson row = FloatJson::array();
    for (float v : m.row(r)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor matrix_from_json(const FloatJson& rows) {
  if (!rows.is_array() || rows.empty()) throw IoError("feature matrix must be a non-empty array");
  const std::size_t T = rows.size(), D = rows[0].size();
  Tensor m({T, D});
  for (std::size_t t = 0; t < T; ++t) {
    if (rows[t].size() != D) throw IoError("ragged feature matrix");
    for (std::size_t i = 0; i < D; ++i) m.at(t, i) = rows[t][i].get<float>();
  }
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string sample_to_json(const MixtureSample& s) {
  FloatJson j;
  j["id"] = s.id;
  j["X"] = matrix_json(s.X);
  j["y1"] = s.y1;
  j["y2"] = s.y2;
  j["t_eos1"] = s.t_eos1;
  j["t_eos2"] = s.t_eos2;
  j["delay"] = s.delay;
  j["overlap_ratio"] = float(s.overlap_ratio);
  j["speakers"] = {s.speaker1, s.speaker2};
  j["speech1"] = {s.speech1.first, s.speech1.last};
  j["speech2"] = {s.speech2.first, s.speech2.last};
  j["extent1"] = {s.extent1.first, s.extent1.last};
  j["extent2"] = {s.extent2.first, s.extent2.last};
  return j.dump();
}

MixtureSample sample_from_json(const std::string& line) {
  FloatJson j;
  try {
    j = FloatJson::parse(line);
  } catch (const std::exception& e) {
    throw IoError(std::string("malformed dataset record: ") + e.what());
  }
  auto interval = [&](const char* key) {
    const auto& a = j.at(key);
    return Interval{a.at(0).get<int>(), a.at(1).get<int>()};
  };
  try {
    MixtureSample s;
    s.id = j.at("id").get<std::string>();
    s.X = matrix_from_json(j.at("X"));
    s.y1 = j.at("y1").get<std::vector<int>>();
    s.y2 = j.at("y2").get<std::vector<int>>();
    s.t_eos1 = j.at("t_eos1").get<int>();
    s.t_eos2 = j.at("t_eos2").get<int>();
    s.delay = j.at("delay").get<int>();
    s.overlap_ratio = j.at("overlap_ratio").get<float>();
    s.speaker1 = j.at("speakers").at(0).get<int>();
    s.speaker2 = j.at("speakers").at(1).get<int>();
    s.speech1 = interval("speech1");
    s.speech2 = interval("speech2");
    s.extent1 = interval("extent1");
    s.extent2 = interval("extent2");
    return s;
  } catch (const FloatJson::exception& e) {
    throw IoError(std::string("dataset record missing field: ") + e.what());
  }
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto dump_split = [&](const std::vector<MixtureSample>& samples, Split split) {
    std::string text;
    for (const auto& s : samples) text += sample_to_json(s) + "\n";
    write_text(dir / (std::string(split_name(split)) + ".jsonl"), text);
  };
  dump_split(ds.train, Split::train);
  dump_split(ds.dev, Split::dev);
  dump_split(ds.eval, Split::eval);

  ExperimentConfig echo;
  echo.data = ds.config;
  FloatJson manifest;
  manifest["config"] = FloatJson::object();
  for (const auto& [key, value] : config_entries(echo))
    if (key.rfind("data.", 0) == 0) manifest["config"][key] = value;
  manifest["seed"] = ds.seed;
  manifest["prototypes"] = matrix_json(ds.prototypes);
  manifest["splits"] = {{"train", ds.train.size()}, {"dev", ds.dev.size()},
                        {"eval", ds.eval.size()}};
  manifest["vocab"] = {{"blank", 0}, {"eos", ds.config.vocab + 1},
                       {"size", ds.config.vocab + 2}};
  manifest["frame_rate"] = float(ds.config.frame_rate);
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

std::vector<MixtureSample> read_split(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open dataset " + file.string());
  std::vector<MixtureSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sample_from_json(line));
  }
  return out;
}

}  // namespace surt::data
