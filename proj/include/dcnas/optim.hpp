#pragma once

#include <vector>

#include "dcnas/tensor.hpp"

namespace dcnas {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Gradients are read from Parameter::grad and
/// left untouched; call zero_grad() between steps.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }

  /// First and second moment buffers, in parameter order (for checkpoints).
  std::vector<Tensor*> state();
  void set_steps(long t) { t_ = t; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// SGD with heavy-ball momentum and optional L2 weight decay.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double lr, double momentum = 0.9, double weight_decay = 0.0);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor> velocity_;
};

/// base * (1 - iter/max_iter)^power for iter in [0, max_iter].
double poly_lr(double base, long iter, long max_iter, double power = 0.9);

}  // namespace dcnas
