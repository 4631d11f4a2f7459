#include "surt/pipeline.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "surt/checkpoint.h"
#include "surt/errors.h"

namespace surt::pipeline {

namespace {

using Json = nlohmann::ordered_json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

// The dataset must have been generated from the same data.* settings.
void check_manifest(const fs::path& dataset, const ExperimentConfig& cfg) {
  const fs::path path = dataset / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("missing dataset manifest " + path.string());
  Json m;
  try {
    m = Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("malformed dataset manifest " + path.string() + ": " + e.what());
  }
  if (!m.contains("config") || !m["config"].is_object())
    throw IoError("dataset manifest lacks a config echo: " + path.string());
  for (const auto& [key, value] : config_entries(cfg)) {
    if (key.rfind("data.", 0) != 0) continue;
    const auto it = m["config"].find(key);
    if (it == m["config"].end() || !it->is_string() || it->get<std::string>() != value) {
      throw ConfigError(key, "differs from the dataset in " + dataset.string() +
                                 " (regenerate the data or fix the config)");
    }
  }
}

}  // namespace

ExperimentConfig with_seed(ExperimentConfig cfg, std::optional<std::uint64_t> seed) {
  if (seed) cfg.data.seed = cfg.train.seed = *seed;
  return cfg;
}

SurtModel<float> init_model(const ExperimentConfig& cfg) {
  return SurtModel<float>(cfg.model, cfg.data.feature_dim, TokenVocab::with_symbols(cfg.data.vocab),
                          cfg.train.seed);
}

SurtModel<float> load_model(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  auto model = init_model(cfg);
  nn::restore_values(model.params(), nn::load_checkpoint(checkpoint));
  return model;
}

void gen_data(const ExperimentConfig& cfg, const fs::path& out) {
  make_dir(out);
  data::write_dataset(data::generate_dataset(cfg.data, cfg.data.seed), out);
}

std::vector<data::MixtureSample> load_split(const fs::path& dataset, data::Split split,
                                            const ExperimentConfig& cfg) {
  check_manifest(dataset, cfg);
  auto samples = data::read_split(dataset / (std::string(data::split_name(split)) + ".jsonl"));
  const auto vocab = TokenVocab::with_symbols(cfg.data.vocab);
  for (const auto& s : samples) {
    if (s.X.dim(1) != cfg.data.feature_dim)
      throw DimensionError("sample " + s.id + " has feature dim " + std::to_string(s.X.dim(1)));
    vocab.validate_reference(s.y1, true);
    vocab.validate_reference(s.y2, true);
  }
  return samples;
}

std::string loss_log_csv(const std::vector<LossLogRow>& log) {
  std::string out = "step,loss,loss_ch1,loss_ch2\n";
  for (const auto& r : log)
    out += std::to_string(r.step) + "," + fixed(r.loss) + "," + fixed(r.loss_ch1) + "," +
           fixed(r.loss_ch2) + "\n";
  return out;
}

TrainResult train(const ExperimentConfig& cfg, const fs::path& dataset, const fs::path& out,
                  const std::function<void(const LossLogRow&)>& on_step) {
  const auto samples = load_split(dataset, data::Split::train, cfg);
  make_dir(out);
  auto model = init_model(cfg);
  TrainResult r;
  r.parameters = model.parameter_count();
  const auto t0 = std::chrono::steady_clock::now();
  r.log = train_model(model, samples, cfg, on_step);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nn::save_checkpoint(model.params(), out / "checkpoint.bin");
  write_text(out / "loss_log.csv", loss_log_csv(r.log));
  write_text(out / "config.txt", serialize_config(cfg));
  // No timings here: the run manifest must be reproducible byte for byte.
  Json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = Json::object();
  for (const auto& [key, value] : config_entries(cfg)) manifest["config"][key] = value;
  manifest["data_seed"] = cfg.data.seed;
  manifest["train_seed"] = cfg.train.seed;
  manifest["dataset"] = dataset.filename().string();
  manifest["parameters"] = r.parameters;
  manifest["recognition_parameters"] = model.recognition_parameter_count();
  manifest["steps"] = r.log.size();
  manifest["final_loss"] = r.log.empty() ? Json(nullptr) : Json(r.log.back().loss);
  manifest["files"] = {"checkpoint.bin", "loss_log.csv", "config.txt"};
  write_text(out / "run.json", manifest.dump(1) + "\n");
  return r;
}

std::vector<decode::SampleDecode> decode(const ExperimentConfig& cfg,
                                         const fs::path& checkpoint,
                                         const fs::path& dataset, const fs::path& out) {
  const auto samples = load_split(dataset, data::Split::eval, cfg);
  const auto model = load_model(cfg, checkpoint);
  if (out.has_parent_path()) make_dir(out.parent_path());
  std::vector<decode::SampleDecode> decodes;
  decodes.reserve(samples.size());
  std::string text;
  for (const auto& s : samples) {
    decodes.push_back(decode::decode_sample(model, s));
    text += decode::decode_records(decodes.back());
  }
  write_text(out, text);
  return decodes;
}

EvalResult evaluate(const ExperimentConfig& cfg, const std::vector<decode::SampleDecode>& decodes,
                    const std::vector<data::MixtureSample>& eval) {
  std::map<std::string, const decode::SampleDecode*> by_id;
  for (const auto& d : decodes) by_id[d.id] = &d;
  const auto vocab = TokenVocab::with_symbols(cfg.data.vocab);

  std::vector<metrics::ChannelPairTokens> refs, hyps;
  std::vector<metrics::EpObservation> obs;
  std::vector<double> leak, delay;
  double leak_sum = 0;
  std::size_t leak_n = 0;
  for (const auto& s : eval) {
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) throw IoError("no decode record for sample " + s.id);
    const auto& d = *it->second;
    refs.push_back({vocab.strip_eos(s.y1), vocab.strip_eos(s.y2)});
    hyps.push_back({vocab.strip_eos(d.channels[0].tokens), vocab.strip_eos(d.channels[1].tokens)});
    const int t_eos[2] = {s.t_eos1, s.t_eos2};
    for (int c = 0; c < 2; ++c) {
      const auto& h = d.channels[std::size_t(c)];
      obs.push_back({c + 1, t_eos[c], h.t_hat_eos});
      const auto& l = d.leakage[std::size_t(c)];
      if (!l) continue;
      leak_sum += *l;
      ++leak_n;
      if (h.t_hat_eos) {
        leak.push_back(*l);
        delay.push_back(std::max(0, *h.t_hat_eos - t_eos[c]));
      }
    }
  }
  if (by_id.size() != eval.size())
    throw IoError("decode records do not match the eval split (" + std::to_string(by_id.size()) +
                  " records for " + std::to_string(eval.size()) + " samples)");

  EvalResult r;
  r.wer = metrics::score_recognition(refs, hyps);
  r.ep = metrics::ep_statistics(obs, cfg.eval.thresholds);
  r.binding_rate = metrics::channel_binding_rate(refs, hyps);
  r.distinct_rate = metrics::distinct_channel_rate(hyps);
  if (leak_n) r.mean_leakage = leak_sum / double(leak_n);
  r.leakage_delay_correlation = metrics::correlation(leak, delay);

  const double frame_ms = 1000.0 / cfg.data.frame_rate;
  Json j;
  j["samples"] = eval.size();
  auto ter = [](const metrics::TerReport& t) {
    return Json{{"ter", t.ter()},
                {"substitutions", t.errors.substitutions},
                {"deletions", t.errors.deletions},
                {"insertions", t.errors.insertions},
                {"ref_tokens", t.ref_tokens}};
  };
  j["recognition"] = {{"heat", ter(r.wer.heat)},
                      {"best_perm", ter(r.wer.best_perm)},
                      {"best_perm_swapped", r.wer.swapped},
                      {"channel_binding_rate", r.binding_rate},
                      {"distinct_channel_rate", r.distinct_rate}};
  Json ep = Json::object();
  for (const auto& [c, s] : r.ep.per_channel) {
    Json row{{"utterances", s.utterances}, {"delayed", s.delayed},
             {"premature", s.premature},   {"exact", s.exact},
             {"no_ep", s.no_ep},           {"median_mu", optional_json(s.median_mu)},
             {"mean_mu", optional_json(s.mean_mu)}};
    for (int th : cfg.eval.thresholds)
      row["recall@" + std::to_string(th)] = r.ep.recall_at(th, c);
    ep[c == 0 ? "all" : "ch" + std::to_string(c)] = row;
  }
  j["endpoint"] = ep;
  j["frame_rate_hz"] = cfg.data.frame_rate;
  j["frame_ms"] = frame_ms;
  j["frame_note"] = "mu is in frames; at " + fixed(cfg.data.frame_rate, 0) + " Hz, 5 frames = " +
                    fixed(5 * frame_ms, 0) + " ms";
  j["leakage"] = {{"mean", optional_json(r.mean_leakage)},
                  {"correlation_with_delay", optional_json(r.leakage_delay_correlation)}};
  r.summary_json = j.dump(1) + "\n";
  return r;
}

EvalResult eval(const ExperimentConfig& cfg, const fs::path& decodes, const fs::path& dataset,
                const fs::path& out) {
  const auto samples = load_split(dataset, data::Split::eval, cfg);
  auto r = evaluate(cfg, decode::read_decodes(decodes.string()), samples);
  make_dir(out);
  write_text(out / "wer.csv", metrics::wer_csv(r.wer));
  write_text(out / "recall.csv", metrics::recall_csv(r.ep));
  write_text(out / "histogram.csv", metrics::histogram_csv(r.ep));
  write_text(out / "summary.json", r.summary_json);
  return r;
}

}  // namespace surt::pipeline
