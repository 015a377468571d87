#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "effops/task.hpp"
#include "effops/tensor.hpp"

namespace effops {

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 1;

  void validate() const;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// Builds a scalar loss for one batch on the active tape.
using BatchLoss = std::function<Tensor(const TokenBatch& batch, std::span<const int> labels)>;

// Seeded-shuffle minibatch training; each batch is padded to its own longest
// sequence. Returns the mean loss of every epoch.
std::vector<double> train_loop(const std::vector<Tensor>& params, std::span<const Example> data,
                               const TrainConfig& config, const BatchLoss& loss_fn);

}  // namespace effops
