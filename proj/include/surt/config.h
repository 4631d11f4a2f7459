#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "surt/lattice.h"
#include "surt/params.h"

namespace surt {

struct DataConfig {
  std::size_t n_train = 2000;
  std::size_t n_dev = 200;
  std::size_t n_eval = 200;
  std::size_t feature_dim = 16;
  int vocab = 16;  // symbols, excluding blank and eos
  int min_tokens = 3;
  int max_tokens = 6;
  int dur_min = 2;  // frames per token
  int dur_max = 4;
  int pad_min = 1;  // leading / trailing silence frames
  int pad_max = 2;
  int min_delay = 12;
  double noise = 0.1;
  bool silence = false;  // intra-utterance pauses
  int speakers = 8;
  double frame_rate = 25.0;
  std::uint64_t seed = 1;
};

struct ModelConfig {
  std::string encoder = "rnnt";  // rnnt | tt
  std::size_t unmix_dim = 32;
  std::size_t unmix_layers = 2;
  std::size_t unmix_kernel = 3;
  std::size_t enc_dim = 48;
  std::size_t enc_layers = 1;
  std::size_t pred_dim = 32;
  std::size_t joint_dim = 32;
  std::size_t chunk = 0;  // frames; tt only
  double mask_bias_spread = 0.0;  // init range of the mask output bias
};

struct TrainConfig {
  std::size_t steps = 2500;
  std::size_t batch = 16;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 5.0;  // global norm; 0 disables
  std::uint64_t seed = 1;
  std::size_t log_every = 25;
  // Leading steps trained on references without eos (and without penalty).
  std::size_t warm_steps = 0;
  bool lr_decay = false;  // cosine decay of lr to 0 over train.steps
};

struct LossConfig {
  std::string assignment = "heat";  // heat | pit
  bool eos = true;
  bool penalty = false;
  double alpha = 2.0;
  int t_buffer = 3;

  rnnt::PenaltyConfig penalty_config() const { return {alpha, t_buffer, penalty && eos}; }
};

struct EvalConfig {
  std::vector<int> thresholds = {5, 7, 9};
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  EvalConfig eval;

  nn::AdamConfig adam() const {
    nn::AdamConfig a;
    a.lr = train.lr;
    a.beta1 = train.beta1;
    a.beta2 = train.beta2;
    return a;
  }
};

// Flat "key.path = value" text, '#' comments. Unknown keys, malformed values
// and invariant violations raise ConfigError naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);
void validate_config(const ExperimentConfig& cfg);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// (key, value text) for every key in serialization order.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);

}  // namespace surt
