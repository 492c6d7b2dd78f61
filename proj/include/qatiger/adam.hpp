// Bias-corrected Adam with stepped learning-rate decay.
#pragma once

#include <cmath>
#include <vector>

#include "qatiger/tensor.hpp"

namespace qatiger {

template <typename Scalar>
struct AdamConfig {
  Scalar lr = Scalar(1e-4);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  Scalar decay_factor = Scalar(0.1);  // multiplies the lr at every decay boundary
  int decay_every = 8;                // epochs per boundary
};

template <typename Scalar>
class AdamState {
 public:
  AdamState() = default;

  template <typename ParamRange>
  AdamState(AdamConfig<Scalar> cfg, const ParamRange& params) : cfg_(cfg) {
    for (const Tensor<Scalar>* p : params) {
      m_.push_back(Tensor<Scalar>::zeros(p->dims()));
      v_.push_back(Tensor<Scalar>::zeros(p->dims()));
    }
  }

  const AdamConfig<Scalar>& config() const { return cfg_; }
  long step_count() const { return step_; }
  int epoch() const { return epoch_; }

  void set_epoch(int epoch) { epoch_ = epoch; }

  // lr · factor^floor(epoch / interval); with the defaults the rate drops by
  // 0.1 at epochs 8, 16, ...
  Scalar effective_lr() const {
    const int boundaries = cfg_.decay_every > 0 ? epoch_ / cfg_.decay_every : 0;
    return cfg_.lr * static_cast<Scalar>(std::pow(static_cast<double>(cfg_.decay_factor),
                                                  static_cast<double>(boundaries)));
  }

  template <typename ParamRange, typename GradRange>
  void step(const ParamRange& params, const GradRange& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw ShapeError("adam_step: parameter/gradient count mismatch");
    }
    ++step_;
    const Scalar lr = effective_lr();
    const Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(static_cast<double>(cfg_.beta1),
                                                                static_cast<double>(step_)));
    const Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(static_cast<double>(cfg_.beta2),
                                                                static_cast<double>(step_)));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      Tensor<Scalar>& p = *params[i];
      const Tensor<Scalar>& g = *grads[i];
      if (!p.same_shape(m_[i]) || !g.same_shape(m_[i])) {
        throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
      }
      m_[i].array() = cfg_.beta1 * m_[i].array() + (Scalar(1) - cfg_.beta1) * g.array();
      v_[i].array() = cfg_.beta2 * v_[i].array() + (Scalar(1) - cfg_.beta2) * g.array().square();
      p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

 private:
  AdamConfig<Scalar> cfg_;
  long step_ = 0;
  int epoch_ = 0;
  std::vector<Tensor<Scalar>> m_;
  std::vector<Tensor<Scalar>> v_;
};

}  // namespace qatiger
