#include "cdvg/nn/module.hpp"

#include <cmath>

namespace cdvg::nn {
namespace {

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.span()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

void Module::register_parameter(std::string name, Var* param) {
  params_.emplace_back(std::move(name), param);
}

void Module::register_buffer(std::string name, Tensor* buffer) {
  buffers_.emplace_back(std::move(name), buffer);
}

void Module::register_module(std::string name, Module* child) {
  children_.emplace_back(std::move(name), child);
}

void Module::collect(const std::string& prefix, std::vector<std::pair<std::string, Var>>& params,
                     std::vector<NamedTensor>* buffers) {
  for (auto& [name, p] : params_) params.emplace_back(prefix + name, *p);
  if (buffers != nullptr) {
    for (auto& [name, b] : buffers_) buffers->push_back({prefix + name, b});
  }
  for (auto& [name, child] : children_) child->collect(prefix + name + ".", params, buffers);
}

std::vector<std::pair<std::string, Var>> Module::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  const_cast<Module*>(this)->collect("", out, nullptr);
  return out;
}

std::vector<Var> Module::parameters() const {
  std::vector<Var> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> Module::state() {
  std::vector<std::pair<std::string, Var>> params;
  std::vector<NamedTensor> buffers;
  collect("", params, &buffers);
  std::vector<NamedTensor> out;
  for (auto& [name, p] : params) out.push_back({name, &p.node()->value});
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

void Module::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

void Module::set_training(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->set_training(training);
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.numel();
  return n;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias) : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Var::parameter(uniform_init({out, in}, bound, rng));
  register_parameter("weight", &weight_);
  if (bias) {
    bias_ = Var::parameter(uniform_init({out}, bound, rng));
    register_parameter("bias", &bias_);
  }
}

Var Linear::forward(const Var& x) const {
  Var y = matmul(x, weight_, false, true);
  return bias_.defined() ? add_row_bias(y, bias_) : y;
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
               std::size_t padding, Rng& rng, bool bias)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), padding_(padding) {
  const std::size_t fan_in = in * kernel * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = Var::parameter(uniform_init({out, fan_in}, bound, rng));
  register_parameter("weight", &weight_);
  if (bias) {
    bias_ = Var::parameter(uniform_init({out}, bound, rng));
    register_parameter("bias", &bias_);
  }
}

Var Conv2d::forward(const Var& x) const {
  ConvGeometry geom{x.dim(0), in_, x.dim(2), x.dim(3), kernel_, stride_, padding_};
  if (x.dim(1) != in_) {
    throw std::invalid_argument("Conv2d: expected " + std::to_string(in_) + " channels, got " +
                                to_string(x.shape()));
  }
  Var cols = im2col(x, geom);
  Var y = cn_to_nc(matmul(weight_, cols), {x.dim(0), out_, geom.out_height(), geom.out_width()});
  return bias_.defined() ? add_channel_bias(y, bias_) : y;
}

ConvTranspose2d::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel,
                                 std::size_t stride, std::size_t padding, Rng& rng, bool bias)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), padding_(padding) {
  const std::size_t fan_in = out * kernel * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = Var::parameter(uniform_init({in, out * kernel * kernel}, bound, rng));
  register_parameter("weight", &weight_);
  if (bias) {
    bias_ = Var::parameter(uniform_init({out}, bound, rng));
    register_parameter("bias", &bias_);
  }
}

Var ConvTranspose2d::forward(const Var& x) const {
  if (x.dim(1) != in_) {
    throw std::invalid_argument("ConvTranspose2d: expected " + std::to_string(in_) +
                                " channels, got " + to_string(x.shape()));
  }
  const std::size_t oh = (x.dim(2) - 1) * stride_ + kernel_ - 2 * padding_;
  const std::size_t ow = (x.dim(3) - 1) * stride_ + kernel_ - 2 * padding_;
  // The output grid is the input of the conv whose output grid is x.
  ConvGeometry geom{x.dim(0), out_, oh, ow, kernel_, stride_, padding_};
  Var cols = matmul(weight_, nc_to_cn(x), true, false);
  Var y = col2im(cols, geom);
  return bias_.defined() ? add_channel_bias(y, bias_) : y;
}

InstanceNorm2d::InstanceNorm2d(std::size_t channels) {
  gamma_ = Var::parameter(Tensor(Shape{channels}, 1.0f));
  beta_ = Var::parameter(Tensor(Shape{channels}, 0.0f));
  register_parameter("gamma", &gamma_);
  register_parameter("beta", &beta_);
}

Var InstanceNorm2d::forward(const Var& x) const { return instance_norm(x, gamma_, beta_); }

BatchNorm::BatchNorm(std::size_t channels, float momentum)
    : channels_(channels),
      momentum_(momentum),
      running_mean_(Shape{channels}, 0.0f),
      running_var_(Shape{channels}, 1.0f) {
  gamma_ = Var::parameter(Tensor(Shape{channels}, 1.0f));
  beta_ = Var::parameter(Tensor(Shape{channels}, 0.0f));
  register_parameter("gamma", &gamma_);
  register_parameter("beta", &beta_);
  register_buffer("running_mean", &running_mean_);
  register_buffer("running_var", &running_var_);
}

Var BatchNorm::forward(const Var& x) {
  if (!training()) {
    BatchNormStats stats{{running_mean_.data(), running_mean_.data() + channels_},
                         {running_var_.data(), running_var_.data() + channels_}};
    return batch_norm(x, gamma_, beta_, &stats, nullptr);
  }
  BatchNormStats batch;
  Var y = batch_norm(x, gamma_, beta_, nullptr, &batch);
  const std::size_t count = x.numel() / channels_;
  const float unbias = count > 1 ? static_cast<float>(count) / static_cast<float>(count - 1) : 1.0f;
  for (std::size_t c = 0; c < channels_; ++c) {
    running_mean_[c] = (1.0f - momentum_) * running_mean_[c] + momentum_ * batch.mean[c];
    running_var_[c] = (1.0f - momentum_) * running_var_[c] + momentum_ * batch.var[c] * unbias;
  }
  return y;
}

}  // namespace cdvg::nn
