#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "surt/checks.h"
#include "surt/errors.h"
#include "surt/pipeline.h"

using namespace surt;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kBadInput = 2, kIo = 3, kDiverged = 4, kInternal = 5 };

int report(const char* type, const std::string& message, int code,
           const std::string& key = {}) {
  nlohmann::ordered_json j;
  j["error"] = type;
  if (!key.empty()) j["key"] = key;
  j["message"] = message;
  j["exit_code"] = code;
  std::cerr << j.dump() << "\n";
  return code;
}

struct Args {
  std::string config, out, checkpoint, dataset, decodes;
  std::optional<std::uint64_t> seed;
  std::size_t count = 0;
  bool quiet = false;
};

ExperimentConfig load(const Args& a) { return pipeline::with_seed(load_config(a.config), a.seed); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming unmixing and recognition transducer with endpoint detection"};
  app.require_subcommand(1);
  Args a;

  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed-override", a.seed, "replaces data.seed and train.seed");
  };
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", a.config, "experiment config file")->required()->check(CLI::ExistingFile);
    add_seed(c);
  };

  auto* gen = app.add_subcommand("gen-data", "generate train/dev/eval mixtures");
  add_config(gen);
  gen->add_option("--out", a.out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_config(train);
  train->add_option("--dataset", a.dataset, "dataset directory")->required();
  train->add_option("--out", a.out, "run directory")->required();
  train->add_flag("--quiet", a.quiet, "no progress lines");

  auto* dec = app.add_subcommand("decode", "greedy-decode the eval split");
  add_config(dec);
  dec->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  dec->add_option("--dataset", a.dataset, "dataset directory")->required();
  dec->add_option("--out", a.out, "decode records (jsonl)")->required();

  auto* ev = app.add_subcommand("eval", "score decode records against the eval split");
  add_config(ev);
  ev->add_option("--decodes", a.decodes, "decode records (jsonl)")->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", a.dataset, "dataset directory")->required();
  ev->add_option("--out", a.out, "metrics directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of model gradients");
  add_seed(gc);
  a.count = 0;
  gc->add_option("--models", a.count, "random models (default 20)");

  auto* oc = app.add_subcommand("oracle-check", "transducer DP against path enumeration");
  add_seed(oc);
  oc->add_option("--trials", a.count, "random lattices (default 200)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("UsageError", e.what(), kBadInput);
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();
    if (*gen) {
      const auto cfg = load(a);
      pipeline::gen_data(cfg, a.out);
      std::printf("wrote %zu/%zu/%zu samples to %s (%.1fs)\n", cfg.data.n_train, cfg.data.n_dev,
                  cfg.data.n_eval, a.out.c_str(), seconds_since(t0));
    } else if (*train) {
      const auto cfg = load(a);
      const std::size_t every = std::max<std::size_t>(cfg.train.log_every, 1);
      double acc = 0;
      const auto r = pipeline::train(cfg, a.dataset, a.out, [&](const LossLogRow& row) {
        acc += row.loss;
        if (a.quiet || row.step % every != 0) return;
        std::printf("step %zu loss %.4f (%.0fs)\n", row.step, acc / double(every),
                    seconds_since(t0));
        std::fflush(stdout);
        acc = 0;
      });
      std::printf("trained %zu steps, %zu parameters, %.1fs -> %s\n", r.log.size(), r.parameters,
                  r.seconds, a.out.c_str());
    } else if (*dec) {
      const auto d = pipeline::decode(load(a), a.checkpoint, a.dataset, a.out);
      std::printf("decoded %zu samples -> %s\n", d.size(), a.out.c_str());
    } else if (*ev) {
      const auto cfg = load(a);
      const auto r = pipeline::eval(cfg, a.decodes, a.dataset, a.out);
      std::printf("TER heat %.4f best_perm %.4f binding %.3f\n", r.wer.heat.ter(),
                  r.wer.best_perm.ter(), r.binding_rate);
      for (int c : {1, 2}) {
        const auto& s = r.ep.per_channel.at(c);
        if (s.median_mu) std::printf("ch%d no_ep %zu median_mu %.1f", c, s.no_ep, *s.median_mu);
        else std::printf("ch%d no_ep %zu median_mu none", c, s.no_ep);
        for (int th : cfg.eval.thresholds) std::printf(" recall@%d %.3f", th, r.ep.recall_at(th, c));
        std::printf("\n");
      }
    } else if (*gc) {
      const auto r = checks::model_gradcheck(a.seed.value_or(1), a.count ? a.count : 20);
      const double err = std::max(r.max_rel_err, r.max_rel_err_penalized);
      std::printf("%s max_rel_err=%.3e models=%zu entries=%zu worst=\"%s\"\n",
                  err < 1e-3 ? "PASS" : "FAIL", err, r.models, r.entries, r.worst.c_str());
      return err < 1e-3 ? kOk : kCheckFailed;
    } else if (*oc) {
      const auto r = checks::lattice_oracle_check(a.seed.value_or(1), a.count ? a.count : 200);
      const bool ok = r.max_dev < 1e-6 && r.path_mismatches == 0;
      std::printf("%s max_dev=%.3e lattices=%zu path_mismatches=%zu\n", ok ? "PASS" : "FAIL",
                  r.max_dev, r.lattices, r.path_mismatches);
      return ok ? kOk : kCheckFailed;
    }
  } catch (const ConfigError& e) {
    return report("ConfigError", e.what(), kBadInput, e.key());
  } catch (const IoError& e) {
    return report("IoError", e.what(), kIo);
  } catch (const DivergenceError& e) {
    return report("DivergenceError", e.what(), kDiverged);
  } catch (const DimensionError& e) {
    return report("DimensionError", e.what(), kBadInput);
  } catch (const ArgumentError& e) {
    return report("ArgumentError", e.what(), kBadInput);
  } catch (const UsageError& e) {
    return report("UsageError", e.what(), kBadInput);
  } catch (const std::exception& e) {
    return report("InternalError", e.what(), kInternal);
  }
  return kOk;
}
