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

#include "heartmur/nn.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_set>

#include "heartmur/errors.h"

namespace heartmur::nn {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values)
    if (!std::isfinite(v)) throw NumericsError(std::string("non-finite value produced by ") + op);
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> vars) {
  if (!g_grad_enabled) return false;
  for (const auto* v : vars)
    if ((*v)->requires_grad) return true;
  return false;
}

// Output node; when the graph is recorded the parents and closure are set.
template <typename T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> fn, bool record) {
  check_finite(value.values, op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->name = op;
  if (record) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

template <typename T>
void require_matrix(const Var<T>& x, const char* op) {
  if (!x) throw StateError(std::string(op) + ": null input");
  if (x->value.shape.size() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(x->value.shape));
}

template <typename T>
void require_vector(const Var<T>& v, std::size_t n, const char* op, const char* what) {
  if (v->value.shape.size() != 1 || v->value.shape[0] != n)
    throw ShapeError(std::string(op) + ": " + what + " must have shape (" + std::to_string(n) + "), got " +
                     shape_str(v->value.shape));
}

template <typename T>
void accumulate(Node<T>& node, std::size_t i, T g) {
  if (node.requires_grad) node.grad[i] += g;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> dims, T fill) : shape(std::move(dims)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  values.assign(n, fill);
}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> dims, std::vector<T> data) : shape(std::move(dims)), values(std::move(data)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != values.size())
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->name = "constant";
  return node;
}

template <typename T>
Var<T> parameter(Tensor<T> value, std::string name) {
  check_finite(value.values, "parameter init");
  auto node = std::make_shared<Node<T>>();
  node->grad.assign(value.values.size(), T(0));
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return node;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const std::size_t batch = x->value.rows(), in = x->value.cols();
  const std::size_t out = weight->value.rows();
  if (weight->value.cols() != in)
    throw ShapeError("linear: input has " + std::to_string(in) + " features, weight expects " +
                     std::to_string(weight->value.cols()));
  require_vector(bias, out, "linear", "bias");

  Tensor<T> y({batch, out});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) {
      T acc = bias->value.values[o];
      for (std::size_t i = 0; i < in; ++i) acc += x->value.at(n, i) * weight->value.at(o, i);
      y.at(n, o) = acc;
    }

  const bool record = any_requires_grad({&x, &weight, &bias});
  return make_result<T>(std::move(y), "linear", {x, weight, bias},
                        [batch, in, out](Node<T>& self) {
                          Node<T>& xn = *self.parents[0];
                          Node<T>& wn = *self.parents[1];
                          Node<T>& bn = *self.parents[2];
                          for (std::size_t n = 0; n < batch; ++n)
                            for (std::size_t o = 0; o < out; ++o) {
                              const T g = self.grad[n * out + o];
                              if (g == T(0)) continue;
                              accumulate(bn, o, g);
                              for (std::size_t i = 0; i < in; ++i) {
                                accumulate(xn, n * in + i, g * wn.value.values[o * in + i]);
                                accumulate(wn, o * in + i, g * xn.value.values[n * in + i]);
                              }
                            }
                        },
                        record);
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.values) v = std::max(v, T(0));
  const bool record = any_requires_grad({&x});
  return make_result<T>(std::move(y), "relu", {x},
                        [](Node<T>& self) {
                          Node<T>& xn = *self.parents[0];
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            if (xn.value.values[i] > T(0)) accumulate(xn, i, self.grad[i]);
                        },
                        record);
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> y = x->value;
  for (auto& v : y.values) v *= factor;
  const bool record = any_requires_grad({&x});
  return make_result<T>(std::move(y), "scale", {x},
                        [factor](Node<T>& self) {
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            accumulate(*self.parents[0], i, self.grad[i] * factor);
                        },
                        record);
}

template <typename T>
Var<T> batch_norm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       std::span<const T> mean, std::span<const T> var, T eps) {
  require_matrix(x, "batch_norm");
  const std::size_t batch = x->value.rows(), dim = x->value.cols();
  require_vector(gamma, dim, "batch_norm", "gamma");
  require_vector(beta, dim, "batch_norm", "beta");
  if (mean.size() != dim || var.size() != dim) throw ShapeError("batch_norm: statistics length mismatch");

  std::vector<T> inv_std(dim);
  for (std::size_t f = 0; f < dim; ++f) inv_std[f] = T(1) / std::sqrt(var[f] + eps);
  Tensor<T> y({batch, dim});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t f = 0; f < dim; ++f)
      y.at(n, f) = gamma->value.values[f] * (x->value.at(n, f) - mean[f]) * inv_std[f] + beta->value.values[f];

  const bool record = any_requires_grad({&x, &gamma, &beta});
  std::vector<T> mu(mean.begin(), mean.end());
  return make_result<T>(std::move(y), "batch_norm_eval", {x, gamma, beta},
                        [batch, dim, mu = std::move(mu), inv_std](Node<T>& self) {
                          Node<T>& xn = *self.parents[0];
                          Node<T>& gn = *self.parents[1];
                          Node<T>& bn = *self.parents[2];
                          for (std::size_t n = 0; n < batch; ++n)
                            for (std::size_t f = 0; f < dim; ++f) {
                              const std::size_t i = n * dim + f;
                              const T g = self.grad[i];
                              const T xhat = (xn.value.values[i] - mu[f]) * inv_std[f];
                              accumulate(bn, f, g);
                              accumulate(gn, f, g * xhat);
                              accumulate(xn, i, g * gn.value.values[f] * inv_std[f]);
                            }
                        },
                        record);
}

template <typename T>
Var<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                        std::vector<T>* batch_mean, std::vector<T>* batch_var_unbiased) {
  require_matrix(x, "batch_norm");
  const std::size_t batch = x->value.rows(), dim = x->value.cols();
  if (batch < 2) throw PreconditionError("batch_norm in train mode needs a batch of at least 2");
  require_vector(gamma, dim, "batch_norm", "gamma");
  require_vector(beta, dim, "batch_norm", "beta");

  std::vector<T> mean(dim, T(0)), var(dim, T(0)), inv_std(dim);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t f = 0; f < dim; ++f) mean[f] += x->value.at(n, f);
  for (auto& m : mean) m /= static_cast<T>(batch);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t f = 0; f < dim; ++f) {
      const T d = x->value.at(n, f) - mean[f];
      var[f] += d * d;
    }
  if (batch_var_unbiased) batch_var_unbiased->clear();
  for (std::size_t f = 0; f < dim; ++f) {
    if (batch_var_unbiased) batch_var_unbiased->push_back(var[f] / static_cast<T>(batch - 1));
    var[f] /= static_cast<T>(batch);
    inv_std[f] = T(1) / std::sqrt(var[f] + eps);
  }
  if (batch_mean) *batch_mean = mean;

  Tensor<T> xhat({batch, dim});
  Tensor<T> y({batch, dim});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t f = 0; f < dim; ++f) {
      xhat.at(n, f) = (x->value.at(n, f) - mean[f]) * inv_std[f];
      y.at(n, f) = gamma->value.values[f] * xhat.at(n, f) + beta->value.values[f];
    }

  const bool record = any_requires_grad({&x, &gamma, &beta});
  return make_result<T>(std::move(y), "batch_norm_train", {x, gamma, beta},
                        [batch, dim, xhat = std::move(xhat), inv_std](Node<T>& self) {
                          Node<T>& xn = *self.parents[0];
                          Node<T>& gn = *self.parents[1];
                          Node<T>& bn = *self.parents[2];
                          const T b = static_cast<T>(batch);
                          for (std::size_t f = 0; f < dim; ++f) {
                            T sum_g = 0, sum_gx = 0;
                            for (std::size_t n = 0; n < batch; ++n) {
                              sum_g += self.grad[n * dim + f];
                              sum_gx += self.grad[n * dim + f] * xhat.values[n * dim + f];
                            }
                            accumulate(bn, f, sum_g);
                            accumulate(gn, f, sum_gx);
                            if (!xn.requires_grad) continue;
                            const T k = gn.value.values[f] * inv_std[f] / b;
                            for (std::size_t n = 0; n < batch; ++n) {
                              const std::size_t i = n * dim + f;
                              xn.grad[i] += k * (b * self.grad[i] - sum_g - xhat.values[i] * sum_gx);
                            }
                          }
                        },
                        record);
}

template <typename T>
std::vector<T> softmax_row(std::span<const T> logits) {
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T peak = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - peak);
  for (auto& v : out) v /= sum;
  return out;
}

template <typename T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> labels,
                              const std::array<double, 3>& weights) {
  require_matrix(logits, "weighted_cross_entropy");
  const std::size_t batch = logits->value.rows(), classes = logits->value.cols();
  if (classes != weights.size())
    throw ShapeError("weighted_cross_entropy: logits must have 3 columns, got " + std::to_string(classes));
  if (labels.size() != batch)
    throw ShapeError("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for a batch of " +
                     std::to_string(batch));
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw PreconditionError("class weights must be positive");
  if (batch == 0) throw PreconditionError("weighted_cross_entropy: empty batch");

  T total_weight = 0, total = 0;
  std::vector<T> probs(batch * classes);
  for (std::size_t n = 0; n < batch; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= static_cast<int>(classes))
      throw PreconditionError("label " + std::to_string(y) + " outside {0, 1, 2}");
    const std::span<const T> row(logits->value.values.data() + n * classes, classes);
    const T peak = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (const T v : row) sum += std::exp(v - peak);
    const T log_z = peak + std::log(sum);
    const T w = static_cast<T>(weights[static_cast<std::size_t>(y)]);
    total += w * (log_z - row[static_cast<std::size_t>(y)]);
    total_weight += w;
    for (std::size_t c = 0; c < classes; ++c) probs[n * classes + c] = std::exp(row[c] - log_z);
  }

  const bool record = any_requires_grad({&logits});
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result<T>(Tensor<T>({1}, {total / total_weight}), "weighted_cross_entropy", {logits},
                        [batch, classes, probs = std::move(probs), ys = std::move(ys), weights,
                         total_weight](Node<T>& self) {
                          Node<T>& ln = *self.parents[0];
                          const T g = self.grad[0];
                          for (std::size_t n = 0; n < batch; ++n) {
                            const auto y = static_cast<std::size_t>(ys[n]);
                            const T w = static_cast<T>(weights[y]) / total_weight;
                            for (std::size_t c = 0; c < classes; ++c) {
                              const T target = c == y ? T(1) : T(0);
                              accumulate(ln, n * classes + c, g * w * (probs[n * classes + c] - target));
                            }
                          }
                        },
                        record);
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw StateError("backward called without a forward pass");
  if (loss->value.size() != 1) throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss->value.shape));
  if (!loss->requires_grad || !loss->backward_fn)
    throw StateError("backward called on a value with no recorded graph (run forward in train mode)");

  // Reverse topological order by iterative post-order DFS.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* node : order)
    if (node->backward_fn) node->grad.assign(node->value.size(), T(0));
  loss->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
  for (Node<T>* node : order)
    if (!node->backward_fn) check_finite(node->grad, "backward");
}

// --- models -----------------------------------------------------------------

template <typename T>
HeadModel<T> HeadModel<T>::create(std::size_t feature_dim, Rng& rng) {
  if (feature_dim == 0) throw PreconditionError("head feature_dim must be positive");
  HeadModel head;
  head.bn_gamma = parameter(Tensor<T>({feature_dim}, T(1)), "head.bn.gamma");
  head.bn_beta = parameter(Tensor<T>({feature_dim}, T(0)), "head.bn.beta");
  head.bn_running_mean.assign(feature_dim, T(0));
  head.bn_running_var.assign(feature_dim, T(1));
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  Tensor<T> w({kOutputs, feature_dim});
  for (auto& v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
  head.linear_weight = parameter(std::move(w), "head.linear.weight");
  head.linear_bias = parameter(Tensor<T>({kOutputs}, T(0)), "head.linear.bias");
  return head;
}

template <typename T>
Var<T> HeadModel<T>::forward(const Var<T>& features, Mode mode) {
  require_matrix(features, "head");
  if (features->value.cols() != feature_dim())
    throw ShapeError("head expects " + std::to_string(feature_dim()) + " features, got " +
                     std::to_string(features->value.cols()));
  Var<T> normed;
  if (mode == Mode::Train) {
    std::vector<T> mean, var;
    normed = batch_norm_train(features, bn_gamma, bn_beta, eps, &mean, &var);
    for (std::size_t f = 0; f < feature_dim(); ++f) {
      bn_running_mean[f] = (T(1) - momentum) * bn_running_mean[f] + momentum * mean[f];
      bn_running_var[f] = (T(1) - momentum) * bn_running_var[f] + momentum * var[f];
    }
  } else {
    normed = batch_norm_eval<T>(features, bn_gamma, bn_beta, bn_running_mean, bn_running_var, eps);
  }
  return linear(normed, linear_weight, linear_bias);
}

template <typename T>
std::vector<Var<T>> HeadModel<T>::parameters() const {
  return {bn_gamma, bn_beta, linear_weight, linear_bias};
}

template <typename T>
MlpBackbone<T> MlpBackbone<T>::create(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  if (input_dim == 0 || hidden.empty()) throw PreconditionError("mlp needs an input dim and at least one layer");
  MlpBackbone mlp;
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l] == 0) throw PreconditionError("mlp layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> w({hidden[l], fan_in});
    for (auto& v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
    Tensor<T> b({hidden[l]});
    for (auto& v : b.values) v = static_cast<T>(rng.uniform(-bound, bound));
    const std::string prefix = "backbone." + std::to_string(l);
    mlp.weights.push_back(parameter(std::move(w), prefix + ".weight"));
    mlp.biases.push_back(parameter(std::move(b), prefix + ".bias"));
    fan_in = hidden[l];
  }
  return mlp;
}

template <typename T>
std::size_t MlpBackbone<T>::input_dim() const {
  return weights.empty() ? 0 : weights.front()->value.cols();
}

template <typename T>
std::size_t MlpBackbone<T>::output_dim() const {
  return weights.empty() ? 0 : weights.back()->value.rows();
}

template <typename T>
Var<T> MlpBackbone<T>::forward(const Var<T>& x) const {
  Var<T> h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (l > 0) h = relu(h);
    h = linear(h, weights[l], biases[l]);
  }
  return h;
}

template <typename T>
std::vector<Var<T>> MlpBackbone<T>::parameters() const {
  std::vector<Var<T>> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

template <typename T>
Classifier<T> Classifier<T>::create(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  Classifier c;
  std::size_t feature_dim = input_dim;
  if (!hidden.empty()) {
    c.backbone = MlpBackbone<T>::create(input_dim, hidden, rng);
    feature_dim = c.backbone->output_dim();
  }
  c.head = HeadModel<T>::create(feature_dim, rng);
  return c;
}

template <typename T>
std::size_t Classifier<T>::input_dim() const {
  return backbone ? backbone->input_dim() : head.feature_dim();
}

template <typename T>
Var<T> Classifier<T>::forward(const Tensor<T>& features, Mode mode) {
  if (features.shape.size() != 2 || features.cols() != input_dim())
    throw ShapeError("model expects (batch x " + std::to_string(input_dim()) + ") input, got " +
                     shape_str(features.shape));
  if (features.rows() == 0) throw PreconditionError("empty batch");
  if (mode == Mode::Train && features.rows() < 2)
    throw PreconditionError("train-mode forward needs a batch of at least 2 (batch-norm statistics)");
  std::optional<NoGradGuard> no_grad;
  if (mode == Mode::Eval) no_grad.emplace();
  Var<T> h = constant(features);
  if (backbone) h = backbone->forward(h);
  return head.forward(h, mode);
}

template <typename T>
std::vector<Var<T>> Classifier<T>::parameters() const {
  std::vector<Var<T>> out;
  if (backbone) out = backbone->parameters();
  for (auto& p : head.parameters()) out.push_back(p);
  return out;
}

template <typename T>
void Classifier<T>::zero_grad() {
  for (auto& p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

// --- optimization --------------------------------------------------------

template <typename T>
void AdamW<T>::step(const std::vector<Var<T>>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p->value.size(), T(0));
      v_.emplace_back(p->value.size(), T(0));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->value.size() != m_[k].size() || params[k]->grad.size() != m_[k].size())
      throw ShapeError("AdamW: shape of " + params[k]->name + " changed");
    for (const T g : params[k]->grad)
      if (!std::isfinite(g)) throw NumericsError("non-finite gradient for parameter " + params[k]->name);
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
  const T step_lr = static_cast<T>(lr), eps = static_cast<T>(config_.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->value.values;
    const auto& g = params[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      p[i] -= step_lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double lr_at(const ScheduleConfig& config, std::size_t global_step) {
  const std::size_t total = config.total_epochs * config.steps_per_epoch;
  const std::size_t warmup = config.warmup_epochs * config.steps_per_epoch;
  if (config.steps_per_epoch == 0 || total <= warmup)
    throw PreconditionError("schedule needs total epochs > warmup epochs and steps_per_epoch > 0");
  if (global_step >= total)
    throw PreconditionError("step " + std::to_string(global_step) + " outside schedule of " +
                            std::to_string(total) + " steps");
  if (global_step < warmup) return config.base_lr * static_cast<double>(global_step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(global_step - warmup) / static_cast<double>(total - warmup);
  return std::max(0.0, config.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

// --- gradient check ------------------------------------------------------

GradCheckResult gradient_check(Classifier<double>& model, const Tensor<double>& features,
                               std::span<const int> labels, const std::array<double, 3>& weights, double step) {
  model.zero_grad();
  backward(weighted_cross_entropy(model.forward(features, Mode::Train), labels, weights));

  auto loss_value = [&] {
    NoGradGuard no_grad;
    return weighted_cross_entropy(model.forward(features, Mode::Train), labels, weights)->value.values[0];
  };
  GradCheckResult result;
  for (const auto& p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.values[i];
      p->value.values[i] = saved + step;
      const double plus = loss_value();
      p->value.values[i] = saved - step;
      const double minus = loss_value();
      p->value.values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_parameter.empty()) {
        result.max_rel_error = rel;
        result.worst_parameter = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

void randomize_for_gradcheck(Classifier<double>& model, Rng& rng) {
  auto he = [&](const Var<double>& w) {
    const double sd = std::sqrt(2.0 / static_cast<double>(w->value.cols()));
    for (auto& v : w->value.values) v = sd * rng.normal();
  };
  if (model.backbone) {
    for (std::size_t l = 0; l < model.backbone->weights.size(); ++l) {
      he(model.backbone->weights[l]);
      for (auto& v : model.backbone->biases[l]->value.values) v = 0.1 * rng.normal();
    }
  }
  auto& head = model.head;
  for (auto& v : head.bn_gamma->value.values) v = rng.uniform(0.5, 1.5);
  for (auto& v : head.bn_beta->value.values) v = 0.2 * rng.normal();
  he(head.linear_weight);
  for (auto& v : head.linear_bias->value.values) v = 0.2 * rng.normal();
}

double relu_margin(const Classifier<double>& model, const Tensor<double>& features) {
  double margin = std::numeric_limits<double>::infinity();
  if (!model.backbone) return margin;
  NoGradGuard no_grad;
  const auto& mlp = *model.backbone;
  Var<double> h = constant(features);
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    if (l > 0) {
      for (double v : h->value.values) margin = std::min(margin, std::abs(v));
      h = relu(h);
    }
    h = linear(h, mlp.weights[l], mlp.biases[l]);
  }
  return margin;
}

double fd_truncation_error(Classifier<double>& model, const Tensor<double>& features, std::span<const int> labels,
                           const std::array<double, 3>& weights, double step) {
  auto loss_value = [&] {
    NoGradGuard no_grad;
    return weighted_cross_entropy(model.forward(features, Mode::Train), labels, weights)->value.values[0];
  };
  double worst = 0.0;
  for (const auto& p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.values[i];
      auto central = [&](double h) {
        p->value.values[i] = saved + h;
        const double plus = loss_value();
        p->value.values[i] = saved - h;
        const double minus = loss_value();
        p->value.values[i] = saved;
        return (plus - minus) / (2.0 * h);
      };
      const double full = central(step), half = central(step / 2.0);
      worst = std::max(worst, 4.0 / 3.0 * std::abs(full - half) / std::max(std::abs(full), kGradCheckFloor));
    }
  }
  return worst;
}

bool gradcheck_conditioned(Classifier<double>& model, const Tensor<double>& features, std::span<const int> labels,
                           const std::array<double, 3>& weights, double step) {
  return relu_margin(model, features) >= 0.05 &&
         fd_truncation_error(model, features, labels, weights, step) <= 0.25 * 1e-4;
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'H', 'S', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

NamedTensor named(const Var<float>& v) { return {v->name, v->value.shape, v->value.values}; }

void put_u32(std::string& buf, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<char>((v >> s) & 0xFF));
}

std::uint32_t get_u32(const std::string& bytes, std::size_t pos) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

Checkpoint to_checkpoint(const Classifier<float>& model, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  if (model.backbone)
    for (const auto& p : model.backbone->parameters()) ckpt.tensors.push_back(named(p));
  const auto& head = model.head;
  const std::size_t dim = head.feature_dim();
  ckpt.tensors.push_back(named(head.bn_gamma));
  ckpt.tensors.push_back(named(head.bn_beta));
  ckpt.tensors.push_back({"head.bn.running_mean", {dim}, head.bn_running_mean});
  ckpt.tensors.push_back({"head.bn.running_var", {dim}, head.bn_running_var});
  ckpt.tensors.push_back(named(head.linear_weight));
  ckpt.tensors.push_back(named(head.linear_bias));
  return ckpt;
}

Classifier<float> from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  auto fetch = [&](const std::string& name) -> const NamedTensor& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name);
    return *it->second;
  };
  auto as_param = [&](const std::string& name) {
    const auto& t = fetch(name);
    return parameter(Tensor<float>(t.shape, t.values), name);
  };

  Classifier<float> model;
  for (std::size_t l = 0; by_name.count("backbone." + std::to_string(l) + ".weight"); ++l) {
    if (!model.backbone) model.backbone.emplace();
    const std::string prefix = "backbone." + std::to_string(l);
    model.backbone->weights.push_back(as_param(prefix + ".weight"));
    model.backbone->biases.push_back(as_param(prefix + ".bias"));
  }
  auto& head = model.head;
  head.bn_gamma = as_param("head.bn.gamma");
  head.bn_beta = as_param("head.bn.beta");
  head.bn_running_mean = fetch("head.bn.running_mean").values;
  head.bn_running_var = fetch("head.bn.running_var").values;
  head.linear_weight = as_param("head.linear.weight");
  head.linear_bias = as_param("head.linear.bias");

  const std::size_t dim = head.bn_gamma->value.size();
  if (head.bn_beta->value.size() != dim || head.bn_running_mean.size() != dim ||
      head.bn_running_var.size() != dim || head.linear_weight->value.shape != std::vector<std::size_t>{3, dim} ||
      head.linear_bias->value.size() != 3)
    throw FormatError("checkpoint head tensors have inconsistent shapes");
  for (float v : head.bn_running_var)
    if (!(v > 0.0f)) throw FormatError("checkpoint running variance must be positive");
  if (model.backbone) {
    std::size_t fan_in = model.backbone->input_dim();
    for (std::size_t l = 0; l < model.backbone->weights.size(); ++l) {
      const auto& w = model.backbone->weights[l]->value;
      if (w.shape.size() != 2 || w.cols() != fan_in || model.backbone->biases[l]->value.size() != w.rows())
        throw FormatError("checkpoint backbone layer " + std::to_string(l) + " has inconsistent shapes");
      fan_in = w.rows();
    }
    if (fan_in != dim) throw FormatError("checkpoint backbone output does not match head input");
  }
  return model;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    const std::size_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
    if (n != t.values.size()) throw ShapeError("checkpoint tensor " + t.name + " does not match its shape");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string text = header.dump();
  std::string buf(kCheckpointMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(text.size()));
  buf += text;
  for (const auto& t : ckpt.tensors)
    for (float v : t.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u32(buf, bits);
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(name + ": not a checkpoint (bad magic)");
  const auto version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw FormatError(name + ": truncated header");

  Checkpoint ckpt;
  std::size_t pos = 12 + header_len;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(12, header_len));
    ckpt.metadata = header.at("metadata");
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const std::size_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
      if ((bytes.size() - pos) / 4 < n) throw FormatError(name + ": payload shorter than declared tensors");
      t.values.resize(n);
      for (std::size_t i = 0; i < n; ++i, pos += 4) {
        const std::uint32_t bits = get_u32(bytes, pos);
        std::memcpy(&t.values[i], &bits, sizeof bits);
        if (!std::isfinite(t.values[i])) throw FormatError(name + ": non-finite value in " + t.name);
      }
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(name + ": malformed header: " + e.what());
  }
  if (pos != bytes.size()) throw FormatError(name + ": trailing bytes after the declared tensors");
  return ckpt;
}

// --- instantiations ----------------------------------------------------------

#define HEARTMUR_NN_INSTANTIATE(T)                                                                     \
  template struct Tensor<T>;                                                                           \
  template Var<T> constant(Tensor<T>);                                                                 \
  template Var<T> parameter(Tensor<T>, std::string);                                                   \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> relu(const Var<T>&);                                                                 \
  template Var<T> scale(const Var<T>&, T);                                                             \
  template Var<T> batch_norm_eval(const Var<T>&, const Var<T>&, const Var<T>&, std::span<const T>,     \
                                  std::span<const T>, T);                                              \
  template Var<T> batch_norm_train(const Var<T>&, const Var<T>&, const Var<T>&, T, std::vector<T>*,    \
                                   std::vector<T>*);                                                   \
  template Var<T> weighted_cross_entropy(const Var<T>&, std::span<const int>, const std::array<double, 3>&); \
  template void backward(const Var<T>&);                                                               \
  template std::vector<T> softmax_row(std::span<const T>);                                             \
  template struct HeadModel<T>;                                                                        \
  template struct MlpBackbone<T>;                                                                      \
  template struct Classifier<T>;                                                                       \
  template class AdamW<T>;

HEARTMUR_NN_INSTANTIATE(float)
HEARTMUR_NN_INSTANTIATE(double)

#undef HEARTMUR_NN_INSTANTIATE

}  // namespace heartmur::nn
