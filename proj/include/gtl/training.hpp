#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/guidance.hpp"
#include "gtl/nn.hpp"
#include "gtl/rng.hpp"

namespace gtl {

struct TrainOptions {
  double lr = 0.1;
  double momentum = 0.0;
  std::size_t epochs = 1;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t shuffle_seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
};

namespace detail {

inline Batch gather_rows(const Batch& data, const std::vector<std::size_t>& order, std::size_t begin,
                         std::size_t end) {
  Batch b{Matrix(static_cast<Eigen::Index>(end - begin), data.inputs.cols()),
          Matrix(static_cast<Eigen::Index>(end - begin), data.targets.cols())};
  for (std::size_t i = begin; i < end; ++i) {
    b.inputs.row(static_cast<Eigen::Index>(i - begin)) = data.inputs.row(static_cast<Eigen::Index>(order[i]));
    b.targets.row(static_cast<Eigen::Index>(i - begin)) = data.targets.row(static_cast<Eigen::Index>(order[i]));
  }
  return b;
}

}  // namespace detail

// SGD training with an optional guidance mask applied to every raw gradient
// before the optimizer step. After each epoch the network is evaluated on the
// full training data and on_epoch(record, params) is called; returning false
// stops training. Mini-batch order is reshuffled each epoch from shuffle_seed.
template <class OnEpoch>
ParamSet train(ParamSet params, const NetworkSpec& spec, const Batch& data, const TrainOptions& opt,
               const GuidanceMatrix* guidance, OnEpoch&& on_epoch) {
  validate_batch(spec, data);
  if (guidance) require_congruent(params, guidance->values, "train: guidance");
  MomentumState momentum;
  const std::size_t n = data.rows();
  const std::size_t bs = (opt.batch_size == 0 || opt.batch_size >= n) ? n : opt.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng shuffler(opt.shuffle_seed);

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    if (bs == n) {
      auto lg = loss_and_grad(params, spec, data);
      if (guidance) lg.grads = apply_guidance(std::move(lg.grads), *guidance);
      params = sgd_step(std::move(params), lg.grads, opt.lr, &momentum, opt.momentum);
    } else {
      shuffler.shuffle(order.begin(), order.end());
      for (std::size_t start = 0; start < n; start += bs) {
        const Batch mb = detail::gather_rows(data, order, start, std::min(n, start + bs));
        auto lg = loss_and_grad(params, spec, mb);
        if (guidance) lg.grads = apply_guidance(std::move(lg.grads), *guidance);
        params = sgd_step(std::move(params), lg.grads, opt.lr, &momentum, opt.momentum);
      }
    }
    const auto ev = evaluate(params, spec, data);
    if (!on_epoch(EpochRecord{epoch, ev.loss, ev.accuracy}, static_cast<const ParamSet&>(params))) break;
  }
  return params;
}

inline ParamSet train(ParamSet params, const NetworkSpec& spec, const Batch& data, const TrainOptions& opt,
                      const GuidanceMatrix* guidance = nullptr) {
  return train(std::move(params), spec, data, opt, guidance, [](const EpochRecord&, const ParamSet&) { return true; });
}

}  // namespace gtl
