// Copyright 2026 The heartmur Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Small dense autodiff core: just enough reverse-mode machinery for the
// classification head (batch norm + linear), an optional MLP backbone,
// weighted cross-entropy and AdamW. Templated on the scalar type so the
// same code trains in float and is gradient-checked in double.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heartmur/random.h"
#include "json.hpp"

namespace heartmur::nn {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> dims, T fill = T(0));
  Tensor(std::vector<std::size_t> dims, std::vector<T> data);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  T& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
};

// A graph node. Leaves created with requires_grad are trainable parameters;
// interior nodes carry the closure that pushes their gradient to parents.
template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;  // same length as value.values when requires_grad
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value);

template <typename T>
Var<T> parameter(Tensor<T> value, std::string name);

// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- ops ------------------------------------------------------------------

// x: (batch x in), weight: (out x in), bias: (out) -> (batch x out)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// Per-feature normalization with the given statistics (no gradient flows
// into the statistics themselves).
template <typename T>
Var<T> batch_norm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       std::span<const T> mean, std::span<const T> var, T eps);

// Normalization with batch statistics (biased variance). Fills the batch
// mean and unbiased variance for running-stat updates.
template <typename T>
Var<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                        std::vector<T>* batch_mean, std::vector<T>* batch_var_unbiased);

// sum_n w[y_n] * -log softmax(logits_n)[y_n] / sum_n w[y_n]
template <typename T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> labels,
                              const std::array<double, 3>& weights);

// Reverse pass from a scalar loss. Leaf gradients accumulate.
template <typename T>
void backward(const Var<T>& loss);

template <typename T>
std::vector<T> softmax_row(std::span<const T> logits);

// --- models -----------------------------------------------------------------

enum class Mode { Train, Eval };

template <typename T>
struct HeadModel {
  static constexpr std::size_t kOutputs = 3;

  Var<T> bn_gamma, bn_beta;
  std::vector<T> bn_running_mean, bn_running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  Var<T> linear_weight, linear_bias;

  // gamma 1, beta 0, running (0, 1), weights uniform in +-1/sqrt(dim), bias 0.
  static HeadModel create(std::size_t feature_dim, Rng& rng);

  std::size_t feature_dim() const { return bn_running_mean.size(); }
  Var<T> forward(const Var<T>& features, Mode mode);
  std::vector<Var<T>> parameters() const;
};

template <typename T>
struct MlpBackbone {
  std::vector<Var<T>> weights;
  std::vector<Var<T>> biases;

  // Default PyTorch-style init: uniform in +-1/sqrt(fan_in) for W and b.
  static MlpBackbone create(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  // Linear layers with ReLU between them (none after the last).
  Var<T> forward(const Var<T>& x) const;
  std::vector<Var<T>> parameters() const;
};

// Optional backbone followed by the batch-norm + linear head.
template <typename T>
struct Classifier {
  std::optional<MlpBackbone<T>> backbone;
  HeadModel<T> head;

  static Classifier create(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng);

  std::size_t input_dim() const;
  // features: (batch x input_dim) -> logits (batch x 3). Eval mode records
  // no graph.
  Var<T> forward(const Tensor<T>& features, Mode mode);
  std::vector<Var<T>> parameters() const;
  void zero_grad();
};

// --- optimization --------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // p <- p * (1 - lr * wd), then the bias-corrected Adam update. Throws
  // NumericsError naming the parameter on a non-finite gradient; nothing is
  // modified in that case.
  void step(const std::vector<Var<T>>& params, double lr);

  std::uint64_t step_count() const { return steps_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

struct ScheduleConfig {
  double base_lr = 0.001;
  std::size_t warmup_epochs = 5;
  std::size_t total_epochs = 50;
  std::size_t steps_per_epoch = 1;
};

// Linear warmup from 0, then half-cosine decay over the remaining steps.
double lr_at(const ScheduleConfig& config, std::size_t global_step);

// --- gradient check ------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
inline constexpr double kGradCheckFloor = 1e-3;

// Compares autodiff gradients of the train-mode weighted loss against
// central differences for every scalar of every parameter.
GradCheckResult gradient_check(Classifier<double>& model, const Tensor<double>& features,
                               std::span<const int> labels, const std::array<double, 3>& weights,
                               double step = 1e-3);

// Redraws every parameter for a gradient check: He-normal weights keep
// activations of order one at any depth, with small random biases and
// batch-norm affine terms.
void randomize_for_gradcheck(Classifier<double>& model, Rng& rng);

// Smallest |pre-activation| at any ReLU input for `features`. Finite
// differences are unreliable when this is comparable to the step.
double relu_margin(const Classifier<double>& model, const Tensor<double>& features);

// Richardson estimate of the truncation error of the step-`step` central
// difference, from a second difference at step/2: the largest
// 4/3 |D(h) - D(h/2)| / max(|D(h)|, floor) over all parameter scalars.
// It never consults the autodiff gradient.
double fd_truncation_error(Classifier<double>& model, const Tensor<double>& features, std::span<const int> labels,
                           const std::array<double, 3>& weights, double step = 1e-3);

// Whether central differences can adjudicate a 1e-4 check on this draw:
// no ReLU input within 0.05 of its kink and an estimated truncation error
// at most a quarter of the tolerance.
bool gradcheck_conditioned(Classifier<double>& model, const Tensor<double>& features, std::span<const int> labels,
                           const std::array<double, 3>& weights, double step = 1e-3);

// --- checkpoint -------------------------------------------------------------

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;
};

Checkpoint to_checkpoint(const Classifier<float>& model, nlohmann::json metadata);
Classifier<float> from_checkpoint(const Checkpoint& ckpt);

// "HSCK", u32 version, u32 header length, JSON header, f32 payload.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace heartmur::nn
