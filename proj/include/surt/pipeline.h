#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "surt/config.h"
#include "surt/decoder.h"
#include "surt/metrics.h"
#include "surt/model.h"
#include "surt/trainer.h"

// File-level stages shared by the CLI and the acceptance suite.
namespace surt::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "surt 0.1.0";

// --seed-override replaces both the data seed and the training seed.
ExperimentConfig with_seed(ExperimentConfig cfg, std::optional<std::uint64_t> seed);

// The model described by cfg, freshly initialized from cfg.train.seed.
SurtModel<float> init_model(const ExperimentConfig& cfg);
SurtModel<float> load_model(const ExperimentConfig& cfg, const fs::path& checkpoint);

// <out>/{train,dev,eval}.jsonl and manifest.json.
void gen_data(const ExperimentConfig& cfg, const fs::path& out);

std::vector<data::MixtureSample> load_split(const fs::path& dataset, data::Split split,
                                            const ExperimentConfig& cfg);

struct TrainResult {
  std::vector<LossLogRow> log;
  std::size_t parameters = 0;
  double seconds = 0;
};

// <out>/checkpoint.bin, loss_log.csv, config.txt and run.json.
TrainResult train(const ExperimentConfig& cfg, const fs::path& dataset, const fs::path& out,
                  const std::function<void(const LossLogRow&)>& on_step = {});

// Eval split, one JSON record per channel.
std::vector<decode::SampleDecode> decode(const ExperimentConfig& cfg,
                                         const fs::path& checkpoint,
                                         const fs::path& dataset, const fs::path& out);

struct EvalResult {
  metrics::WerReport wer;
  metrics::EpReport ep;
  double binding_rate = 0;
  double distinct_rate = 0;
  std::optional<double> mean_leakage;
  std::optional<double> leakage_delay_correlation;  // leakage vs max(0, mu)
  std::string summary_json;
};

EvalResult evaluate(const ExperimentConfig& cfg, const std::vector<decode::SampleDecode>& decodes,
                    const std::vector<data::MixtureSample>& eval);

// <out>/{wer,recall,histogram}.csv and summary.json.
EvalResult eval(const ExperimentConfig& cfg, const fs::path& decodes, const fs::path& dataset,
                const fs::path& out);

std::string loss_log_csv(const std::vector<LossLogRow>& log);

}  // namespace surt::pipeline
