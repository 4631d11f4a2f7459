#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "surt/config.h"
#include "surt/tensor.h"
#include "surt/vocab.h"

namespace surt::data {

// Closed 1-based frame interval.
struct Interval {
  int first = 0;
  int last = 0;
  bool contains(int t) const { return t >= first && t <= last; }
};

struct Utterance {
  std::vector<int> tokens;  // symbol ids
  std::vector<int> durations;
  Tensor frames;            // [L x D]
  int speaker = 0;
  Interval speech;          // first and last non-silence frame
  std::size_t length() const { return frames.dim(0); }
};

struct MixtureSample {
  std::string id;
  Tensor X;                 // [T x D]
  std::vector<int> y1, y2;  // terminal eos included
  int t_eos1 = 0, t_eos2 = 0;
  int delay = 0;
  double overlap_ratio = 0;
  int speaker1 = 0, speaker2 = 0;
  Interval speech1, speech2;  // mixture coordinates
  Interval extent1, extent2;

  std::size_t frames() const { return X.dim(0); }
};

enum class Split { train, dev, eval };
const char* split_name(Split s);

// [vocab x D] prototype rows, orthogonal when vocab <= D, scaled so entries
// have unit mean square. Row i belongs to symbol i + 1.
Tensor make_prototypes(const DataConfig& cfg, std::uint64_t seed);

// Tokens with uniform durations in [dur_min, dur_max], silence padding on
// both ends and Gaussian noise of scale cfg.noise on every frame.
Utterance render_utterance(const std::vector<int>& tokens, std::mt19937_64& rng,
                           const DataConfig& cfg, const Tensor& prototypes);

// Additive mixture with u2 shifted by `delay` frames.
MixtureSample mix(const Utterance& u1, const Utterance& u2, int delay, int min_delay,
                  const TokenVocab& vocab);

// Deterministic function of (cfg, seed, split, index).
MixtureSample generate_sample(const DataConfig& cfg, std::uint64_t seed, Split split,
                              std::size_t index, const Tensor& prototypes);
std::vector<MixtureSample> generate_split(const DataConfig& cfg, std::uint64_t seed,
                                          Split split, std::size_t n,
                                          const Tensor& prototypes);

struct Dataset {
  DataConfig config;
  std::uint64_t seed = 0;
  Tensor prototypes;
  std::vector<MixtureSample> train, dev, eval;
};

Dataset generate_dataset(const DataConfig& cfg, std::uint64_t seed);

// <dir>/{train,dev,eval}.jsonl and <dir>/manifest.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
std::vector<MixtureSample> read_split(const std::filesystem::path& file);

std::string sample_to_json(const MixtureSample& s);
MixtureSample sample_from_json(const std::string& line);

}  // namespace surt::data
