#include "effops/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "effops/error.hpp"

namespace effops {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || epochs < 1 || batch_size < 1) {
    throw ValidationError("train config: learning rate, epochs and batch size must be positive");
  }
}

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr_ / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!std::isfinite(g[j])) throw NumericError("non-finite gradient during training");
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<double> train_loop(const std::vector<Tensor>& params, std::span<const Example> data,
                               const TrainConfig& config, const BatchLoss& loss_fn) {
  config.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  std::mt19937_64 rng(config.seed);
  Adam opt(params, config.learning_rate);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_loss;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      const TokenBatch batch = batch_examples(data, idx);
      const std::vector<int> labels = labels_of(data, idx);
      Tape tape;
      TapeScope scope(tape);
      opt.zero_grad();
      Tensor loss = loss_fn(batch, labels);
      total += loss.item();
      tape.backward(loss);
      opt.step();
      ++batches;
    }
    epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return epoch_loss;
}

}  // namespace effops
