#pragma once

#include <cstddef>
#include <vector>

#include <filesystem>

#include "cdvg/core/autograd.hpp"

namespace cdvg::nn {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig config);

  // Applies one update from each parameter's accumulated grad(). Parameters
  // that never received a gradient are left untouched.
  void step();
  void zero_grad();

  void set_lr(float lr) { config_.lr = lr; }
  float lr() const { return config_.lr; }
  std::size_t steps() const { return t_; }

  // Moment estimates and step count, for exact training resume.
  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

// Cosine annealing from `base` to `floor` over `total` steps, evaluated at
// step t in [0, total).
float cosine_lr(float base, float floor, std::size_t t, std::size_t total);

}  // namespace cdvg::nn
