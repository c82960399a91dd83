#include "dcnas/optim.hpp"

#include <cmath>

namespace dcnas {

namespace {

void require_trainable(const std::vector<Parameter*>& params, const char* who) {
  for (Parameter* p : params) {
    if (!p->trainable()) throw Error(std::string(who) + ": frozen parameter passed to optimizer");
  }
}

}  // namespace

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  require_trainable(params_, "Adam");
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    double* w = params_[k]->value.data();
    const double* g = params_[k]->grad.data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const std::size_t n = params_[k]->value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

std::vector<Tensor*> Adam::state() {
  std::vector<Tensor*> out;
  for (auto& m : m_) out.push_back(&m);
  for (auto& v : v_) out.push_back(&v);
  return out;
}

Sgd::Sgd(std::vector<Parameter*> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  require_trainable(params_, "Sgd");
  for (Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    double* w = params_[k]->value.data();
    const double* g = params_[k]->grad.data();
    double* vel = velocity_[k].data();
    const std::size_t n = params_[k]->value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * w[i];
      w[i] -= lr_ * vel[i];
    }
  }
}

void Sgd::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double poly_lr(double base, long iter, long max_iter, double power) {
  if (max_iter <= 0) throw Error("poly_lr: max_iter must be positive");
  if (iter < 0 || iter > max_iter) {
    throw Error("poly_lr: iter " + std::to_string(iter) + " outside [0," + std::to_string(max_iter) + "]");
  }
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

}  // namespace dcnas
