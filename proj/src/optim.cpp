// SPDX-License-Identifier: Apache-2.0
#include "pei/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace pei {

std::size_t warmup_steps(std::size_t total, double warmup_ratio) {
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw std::invalid_argument("warmup ratio must lie in [0, 1)");
  }
  return static_cast<std::size_t>(std::llround(warmup_ratio * static_cast<double>(total)));
}

double schedule_lr(std::size_t step, std::size_t total, double warmup_ratio, double peak) {
  if (step > total) {
    throw std::out_of_range("schedule_lr: step " + std::to_string(step) + " exceeds total " +
                            std::to_string(total));
  }
  const std::size_t warm = warmup_steps(total, warmup_ratio);
  if (warm > 0 && step <= warm) {
    return peak * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (total == warm) return 0.0;
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

AdamW::AdamW(const ParameterStore& trainable, AdamWOptions options) : options_(options) {
  for (const auto& [name, t] : trainable.entries()) {
    slots_[name] = Slot{t, std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)};
  }
}

void AdamW::step(double lr) {
  for (const auto& [name, s] : slots_) {
    const auto g = s.param.grad();
    if (!g) continue;
    for (double x : *g) {
      if (!std::isfinite(x)) throw NonFiniteGradient("non-finite gradient in '" + name + "'");
    }
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& [name, s] : slots_) {
    if (!s.param.requires_grad()) continue;
    const auto g = s.param.grad();
    auto theta = s.param.mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      theta[i] -= lr * options_.weight_decay * theta[i];
      theta[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace pei

namespace pei {

std::vector<LossLogEntry> run_training(const ParameterStore& trainable, std::size_t count,
                                       const std::function<Tensor(std::size_t)>& loss_fn,
                                       const LoopOptions& options) {
  if (count == 0) throw std::invalid_argument("run_training: empty dataset");
  if (options.batch_size == 0) throw std::invalid_argument("run_training: batch_size must be >= 1");
  ParameterStore params = trainable;
  AdamW opt(params, {0.9, 0.999, 1e-8, options.weight_decay});
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : params.entries()) leaves.push_back(t);
  Rng rng(options.seed);
  std::vector<std::size_t> order(count);
  std::size_t cursor = count;
  std::vector<LossLogEntry> log;
  const double inv_batch = 1.0 / static_cast<double>(options.batch_size);
  for (std::size_t step = 1; step <= options.steps; ++step) {
    params.zero_grads();
    double total = 0;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      if (cursor == count) {
        for (std::size_t i = 0; i < count; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Tensor loss = loss_fn(order[cursor++]);
      total += loss.item();
      if (loss.requires_grad()) accumulate_gradients(leaves, backward(scale(loss, inv_batch)));
    }
    // update k (0-based) takes the rate scheduled at k
    const double lr = schedule_lr(step - 1, options.steps, options.warmup_ratio, options.lr);
    opt.step(lr);
    log.push_back({step, lr, total * inv_batch});
  }
  params.zero_grads();
  return log;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossLogEntry>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot write loss log " + path.string());
  if (std::filesystem::file_size(path) == 0) os << "step,lr,loss\n";
  os.precision(10);
  for (const LossLogEntry& e : log) os << e.step << ',' << e.lr << ',' << e.loss << '\n';
}

}  // namespace pei
