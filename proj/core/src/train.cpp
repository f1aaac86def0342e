#include "ncconv/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "ncconv/loss.hpp"

namespace ncconv {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be a finite non-negative number");
  if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be positive");
  if (lr_decay_every == 0) fail("lr_decay_every must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(shift_frac >= 0.0 && shift_frac < 1.0)) fail("shift_frac must be in [0, 1)");
  if (eval_batch_size == 0) fail("eval_batch_size must be positive");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
}

template <typename T>
void Sgd<T>::step(const std::vector<ParamRef<T>>& params, double lr) {
  const T rate = static_cast<T>(lr);
  const T wd = static_cast<T>(weight_decay_);
  const T mom = static_cast<T>(momentum_);
  for (const auto& p : params) {
    auto w = p.value->data();
    const auto g = p.grad->data();
    if (momentum_ == 0.0) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= rate * (g[i] + wd * w[i]);
      continue;
    }
    auto [it, inserted] = velocity_.try_emplace(p.name, p.value->shape());
    auto v = it->second.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = mom * v[i] + g[i] + wd * w[i];
      w[i] -= rate * v[i];
    }
  }
}

template <typename T>
double gradient_norm(const std::vector<ParamRef<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += squared_norm<T>(p.grad->data());
  return std::sqrt(sq);
}

namespace {

template <typename T>
std::string grad_report(const std::vector<ParamRef<T>>& params) {
  std::ostringstream os;
  for (const auto& p : params) os << "\n  " << p.name << " |grad|=" << std::sqrt(squared_norm<T>(p.grad->data()));
  return os.str();
}

}  // namespace

template <typename T>
MetricsRecord train_epoch(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                          std::size_t epoch, Sgd<T>& optimizer, std::size_t& global_step,
                          const StepCallback& on_step) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const double lr = lr_at_epoch(cfg, epoch);
  BatchIterator batches(data.size(), cfg.batch_size, cfg.shuffle, mix_seed(cfg.seed, epoch, 1));
  Rng aug_rng(mix_seed(cfg.seed, epoch, 2));
  const AugmentFlags flags{cfg.hflip, cfg.shift_frac};
  auto params = model.parameters();

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.lr = lr;
  double loss_sum = 0.0, grad_norm_sum = 0.0;
  std::size_t correct = 0, seen = 0, steps = 0;
  std::vector<std::size_t> idx;
  while (batches.next(idx)) {
    Batch b = gather(data, idx);
    if (flags.hflip || flags.shift_frac > 0.0) b.images = augment(b.images, aug_rng, flags);
    const Tensor<T> x = prepare_inputs<T>(b.images, data);
    const Tensor<T> logits = model.forward(x, true);
    auto loss = cross_entropy(logits, b.labels);
    if (!std::isfinite(loss.loss)) {
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(global_step) + "; last parameter gradients:" +
                            grad_report(params));
    }
    correct += topk_correct(logits, b.labels, 1);
    model.backward(loss.grad);
    const double gn = gradient_norm(params);
    optimizer.step(params, lr);
    ++global_step;
    ++steps;
    seen += idx.size();
    loss_sum += loss.loss * static_cast<double>(idx.size());
    grad_norm_sum += gn;
    if (on_step) on_step({epoch, global_step, loss.loss, gn});
  }
  rec.step = global_step;
  rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
  rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
  rec.mean_grad_norm = steps ? grad_norm_sum / static_cast<double>(steps) : 0.0;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

template <typename T>
MetricsRecord evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size) {
  MetricsRecord rec;
  BatchIterator batches(data.size(), batch_size, false, 0);
  double loss_sum = 0.0;
  std::size_t top1 = 0, top5 = 0;
  std::vector<std::size_t> idx;
  while (batches.next(idx)) {
    Batch b = gather(data, idx);
    const Tensor<T> logits = model.forward(prepare_inputs<T>(b.images, data), false);
    loss_sum += cross_entropy(logits, b.labels).loss * static_cast<double>(idx.size());
    top1 += topk_correct(logits, b.labels, 1);
    top5 += topk_correct(logits, b.labels, 5);
  }
  if (data.size()) {
    const double n = static_cast<double>(data.size());
    rec.val_loss = loss_sum / n;
    rec.val_top1 = static_cast<double>(top1) / n;
    rec.val_top5 = static_cast<double>(top5) / n;
  }
  return rec;
}

#define NCCONV_INSTANTIATE(T)                                                                  \
  template class Sgd<T>;                                                                       \
  template double gradient_norm<T>(const std::vector<ParamRef<T>>&);                           \
  template MetricsRecord train_epoch<T>(Model<T>&, const Dataset&, const TrainConfig&,         \
                                        std::size_t, Sgd<T>&, std::size_t&, const StepCallback&); \
  template MetricsRecord evaluate<T>(Model<T>&, const Dataset&, std::size_t);

NCCONV_INSTANTIATE(float)
NCCONV_INSTANTIATE(double)
#undef NCCONV_INSTANTIATE

}  // namespace ncconv
