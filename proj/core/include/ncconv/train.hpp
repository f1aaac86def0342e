#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ncconv/data.hpp"
#include "ncconv/model.hpp"

namespace ncconv {

// Defaults are the micro-batch protocol: batch 2, plain SGD at 0.01, x0.1 every 30 epochs.
struct TrainConfig {
  std::size_t batch_size = 2;
  double lr = 0.01;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_every = 30;
  std::size_t epochs = 50;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  bool hflip = false;
  double shift_frac = 0.0;
  std::size_t eval_batch_size = 100;
  bool shuffle = true;

  void validate() const;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global optimizer steps completed
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;  // accuracy in [0, 1]
  double val_top5 = 0.0;
  double mean_grad_norm = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// lr0 * factor^floor(epoch / every).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

// w <- w - lr * (g + weight_decay * w), with optional heavy-ball momentum.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum = 0.0, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<ParamRef<T>>& params, double lr);

  std::map<std::string, Tensor<T>>& velocity() { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Tensor<T>> velocity_;
};

struct StepEvent {
  std::size_t epoch;
  std::size_t step;
  double loss;
  double grad_norm;
};

using StepCallback = std::function<void(const StepEvent&)>;

// One pass over `data`. Batch order and augmentation draws depend only on (seed, epoch),
// so a resumed run replays exactly. Throws DivergenceError on a non-finite loss.
template <typename T>
MetricsRecord train_epoch(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                          std::size_t epoch, Sgd<T>& optimizer, std::size_t& global_step,
                          const StepCallback& on_step = {});

// Fills val_loss / val_top1 / val_top5; other fields are zero.
template <typename T>
MetricsRecord evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size);

// Global L2 norm over all parameter gradients.
template <typename T>
double gradient_norm(const std::vector<ParamRef<T>>& params);

}  // namespace ncconv
