#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cdvg/core/autograd.hpp"
#include "cdvg/core/ops.hpp"
#include "cdvg/core/rng.hpp"

namespace cdvg::nn {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

// Base for layers and models: a tree of named parameters and buffers.
// Registration stores raw pointers into members, so modules are neither
// copyable nor movable once constructed.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  std::vector<Var> parameters() const;
  std::vector<std::pair<std::string, Var>> named_parameters() const;
  // Parameters and buffers (e.g. running statistics), the checkpointed state.
  std::vector<NamedTensor> state();

  void zero_grad();
  void set_training(bool training);
  bool training() const { return training_; }
  std::size_t parameter_count() const;

 protected:
  void register_parameter(std::string name, Var* param);
  void register_buffer(std::string name, Tensor* buffer);
  void register_module(std::string name, Module* child);

 private:
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var>>& params,
               std::vector<NamedTensor>* buffers);

  std::vector<std::pair<std::string, Var*>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  bool training_ = true;
};

// y = x W^T + b, x: [n, in]
class Linear : public Module {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  Var forward(const Var& x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_, out_;
  Var weight_;
  Var bias_;
};

class Conv2d : public Module {
 public:
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng, bool bias = true);
  Var forward(const Var& x) const;

 private:
  std::size_t in_, out_, kernel_, stride_, padding_;
  Var weight_;  // [out, in*k*k]
  Var bias_;
};

// Transposed convolution (the adjoint of Conv2d's input map).
class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                  std::size_t padding, Rng& rng, bool bias = true);
  Var forward(const Var& x) const;

 private:
  std::size_t in_, out_, kernel_, stride_, padding_;
  Var weight_;  // [in, out*k*k]
  Var bias_;
};

class InstanceNorm2d : public Module {
 public:
  explicit InstanceNorm2d(std::size_t channels);
  Var forward(const Var& x) const;

 private:
  Var gamma_, beta_;
};

// Batch normalization over rank-2 ([n, f]) or rank-4 ([n, c, h, w]) inputs
// with running statistics for inference.
class BatchNorm : public Module {
 public:
  explicit BatchNorm(std::size_t channels, float momentum = 0.1f);
  Var forward(const Var& x);

 private:
  std::size_t channels_;
  float momentum_;
  Var gamma_, beta_;
  Tensor running_mean_, running_var_;
};

}  // namespace cdvg::nn
