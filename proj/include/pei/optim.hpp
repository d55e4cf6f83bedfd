// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pei/params.hpp"

namespace pei {

/// Linear warmup to `peak` over round(ratio * total) steps, then linear
/// decay to 0 at `total`.
double schedule_lr(std::size_t step, std::size_t total, double warmup_ratio, double peak);
std::size_t warmup_steps(std::size_t total, double warmup_ratio);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// AdamW with decoupled weight decay. Only the parameters handed to the
/// constructor are ever written.
class AdamW {
 public:
  AdamW(const ParameterStore& trainable, AdamWOptions options);

  /// Applies one update from each parameter's accumulated grad. Throws
  /// NonFiniteGradient before touching anything when a gradient is NaN/Inf.
  void step(double lr);
  std::size_t steps_taken() const { return t_; }
  const AdamWOptions& options() const { return options_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::map<std::string, Slot> slots_;
  AdamWOptions options_;
  std::size_t t_ = 0;
};

struct LossLogEntry {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
};

struct LoopOptions {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double warmup_ratio = 0.05;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

/// Mini-batch AdamW loop over examples 0..count-1, reshuffled every epoch.
/// loss_fn returns the scalar loss of one example; the batch loss is the mean.
std::vector<LossLogEntry> run_training(const ParameterStore& trainable, std::size_t count,
                                       const std::function<Tensor(std::size_t)>& loss_fn,
                                       const LoopOptions& options);

/// Append-only CSV: step,lr,loss.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossLogEntry>& log);

}  // namespace pei
