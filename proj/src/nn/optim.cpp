#include "cdvg/nn/optim.hpp"

#include <cmath>
#include <numbers>

#include "cdvg/nn/checkpoint.hpp"
#include "cdvg/simd/kernels.hpp"

namespace cdvg::nn {

Adam::Adam(std::vector<Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const Var& p : params_) {
    m_.emplace_back(p.shape(), 0.0f);
    v_.emplace_back(p.shape(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const auto t = static_cast<float>(t_);
  const simd::AdamArgs args{config_.lr, config_.beta1, config_.beta2, config_.eps,
                            1.0f - std::pow(config_.beta1, t), 1.0f - std::pow(config_.beta2, t)};
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.grad().defined()) continue;
    simd::adam_step(p.numel(), p.mutable_value().data(), p.grad().data(), m_[i].data(),
                    v_[i].data(), args);
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

namespace {

std::vector<NamedTensor> adam_entries(std::vector<Tensor>& m, std::vector<Tensor>& v, Tensor& step) {
  std::vector<NamedTensor> entries{{"step", &step}};
  for (std::size_t i = 0; i < m.size(); ++i) {
    entries.push_back({"m." + std::to_string(i), &m[i]});
    entries.push_back({"v." + std::to_string(i), &v[i]});
  }
  return entries;
}

}  // namespace

void Adam::save(const std::filesystem::path& path) {
  // Step count as two 24-bit halves so it survives the float payload exactly.
  Tensor step(Shape{2});
  step[0] = static_cast<float>(t_ >> 24);
  step[1] = static_cast<float>(t_ & 0xFFFFFF);
  save_tensors(adam_entries(m_, v_, step), path);
}

void Adam::load(const std::filesystem::path& path) {
  Tensor step(Shape{2});
  load_tensors(adam_entries(m_, v_, step), path);
  t_ = (static_cast<std::size_t>(step[0]) << 24) | static_cast<std::size_t>(step[1]);
}

float cosine_lr(float base, float floor, std::size_t t, std::size_t total) {
  if (total <= 1) return base;
  const double progress = static_cast<double>(t) / static_cast<double>(total);
  return static_cast<float>(floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace cdvg::nn
