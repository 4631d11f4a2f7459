#include "surt/trainer.h"

#include <cmath>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace surt {

ChannelTarget channel_target(const data::MixtureSample& s, int channel, const LossConfig& loss,
                             const TokenVocab& vocab) {
  ChannelTarget t;
  const auto& y = channel == 1 ? s.y1 : s.y2;
  t.labels = loss.eos ? y : vocab.strip_eos(y);
  t.t_eos = channel == 1 ? s.t_eos1 : s.t_eos2;
  return t;
}

template <typename T>
SurtLoss<T> sample_loss(nn::Graph<T>& g, const SurtModel<T>& model, const data::MixtureSample& s,
                        const LossConfig& loss) {
  auto x = g.constant(s.X.template cast<T>());
  const auto r1 = channel_target(s, 1, loss, model.vocab());
  const auto r2 = channel_target(s, 2, loss, model.vocab());
  const auto pen = loss.penalty_config();
  if (loss.assignment == "pit") return pit_loss(g, model, x, r1, r2, pen, loss.eos);
  return heat_loss(g, model, x, r1, r2, pen, loss.eos);
}

template SurtLoss<float> sample_loss<float>(nn::Graph<float>&, const SurtModel<float>&,
                                            const data::MixtureSample&, const LossConfig&);
template SurtLoss<double> sample_loss<double>(nn::Graph<double>&, const SurtModel<double>&,
                                              const data::MixtureSample&, const LossConfig&);

std::size_t worker_count() {
  if (const char* env = std::getenv("SURT_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return std::size_t(n);
  }
  return 1;
}

namespace {

struct SampleResult {
  double loss = 0, ch1 = 0, ch2 = 0;
  std::vector<std::pair<std::size_t, Tensor>> grads;
  std::exception_ptr error;
};

}  // namespace

StepResult training_step(SurtModel<float>& model,
                         std::span<const data::MixtureSample* const> batch,
                         const TrainOptions& opts) {
  if (batch.empty()) throw ArgumentError("training_step needs a non-empty batch");
  std::vector<SampleResult> results(batch.size());
  auto work = [&](std::size_t i) {
    try {
      nn::Graph<float> g;
      auto l = sample_loss(g, model, *batch[i], opts.loss);
      results[i].loss = double(l.total.value().item());
      results[i].ch1 = l.ch1;
      results[i].ch2 = l.ch2;
      g.backward(l.total);
      results[i].grads = g.parameter_grads();
    } catch (...) {
      results[i].error = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(opts.threads, 1), batch.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) work(i);
      });
    for (auto& t : pool) t.join();
  }

  auto& store = model.params();
  store.zero_grads();
  StepResult out;
  for (auto& r : results) {
    if (r.error) std::rethrow_exception(r.error);
    if (!std::isfinite(r.loss)) throw DivergenceError("non-finite training loss");
    out.loss += r.loss;
    out.loss_ch1 += r.ch1;
    out.loss_ch2 += r.ch2;
    for (const auto& [index, grad] : r.grads) store.accumulate_grad(index, grad.values());
  }
  const double n = double(batch.size());
  out.loss /= n;
  out.loss_ch1 /= n;
  out.loss_ch2 /= n;
  store.scale_grads(float(1.0 / n));
  out.grad_norm = store.grad_norm();
  if (!std::isfinite(out.grad_norm)) throw DivergenceError("non-finite gradient norm");
  if (opts.grad_clip > 0 && out.grad_norm > opts.grad_clip)
    store.scale_grads(float(opts.grad_clip / out.grad_norm));
  nn::adam_step(store, opts.adam);
  return out;
}

std::vector<LossLogRow> train_model(SurtModel<float>& model,
                                    const std::vector<data::MixtureSample>& train,
                                    const ExperimentConfig& cfg,
                                    const std::function<void(const LossLogRow&)>& on_step) {
  if (train.empty() && cfg.train.steps > 0) throw ArgumentError("empty training set");
  TrainOptions opts;
  opts.loss = cfg.loss;
  opts.adam = cfg.adam();
  opts.grad_clip = cfg.train.grad_clip;
  opts.threads = worker_count();

  std::seed_seq seq{std::uint32_t(cfg.train.seed), std::uint32_t(cfg.train.seed >> 32),
                    0x73687566u};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  std::vector<LossLogRow> log;
  std::vector<const data::MixtureSample*> batch;
  for (std::size_t step = 1; step <= cfg.train.steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.train.batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&train[order[cursor++]]);
    }
    TrainOptions step_opts = opts;
    if (step <= cfg.train.warm_steps) step_opts.loss.eos = step_opts.loss.penalty = false;
    if (cfg.train.lr_decay)
      step_opts.adam.lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * double(step - 1) /
                                                 double(cfg.train.steps)));
    const auto r = training_step(model, batch, step_opts);
    log.push_back({step, r.loss, r.loss_ch1, r.loss_ch2});
    if (on_step) on_step(log.back());
  }
  return log;
}

}  // namespace surt
