// Copyright 2026 The fedbag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Gated-attention multiple-instance network.
//
//   H    = relu(X W_projᵀ + b_proj)                  projection, M × d_proj
//   T    = tanh(H V_aᵀ + b_v),  G = sigm(H U_aᵀ + b_u)    attention hidden
//   e_m  = W_a (T_m ⊙ G_m) + b_a                      per-instance score
//   A    = softmax_m(e)                               attention weights
//   h    = Σ_m A_m H_m                                 pooled bag vector
//   s    = W_pred h + b_pred                          logits
//
// Dropout (inverted scaling) is applied to T and G in training mode only.
// Gradients are derived by hand for this architecture; there is no autodiff.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "fedbag/common.hpp"
#include "fedbag/rng.hpp"

namespace fedbag {

struct ModelDims {
  int d_in = 1024;
  int d_proj = 512;
  int d_attn = 256;
  int n_out = 2;  // n_classes for classification, R for survival

  bool valid() const { return d_in >= 1 && d_proj >= 1 && d_attn >= 1 && n_out >= 1; }
  bool operator==(const ModelDims&) const = default;
};

/// Non-shape architecture switches.
struct ForwardOptions {
  double dropout = 0.25;
  bool projection_relu = true;
};

enum class Mode { kTrain, kEval };

inline constexpr std::array<std::string_view, 10> kTensorNames = {
    "proj.weight",   "proj.bias",   "attn.v.weight", "attn.v.bias", "attn.u.weight",
    "attn.u.bias",   "attn.w.weight", "attn.w.bias", "pred.weight", "pred.bias"};

template <typename T>
struct ModelWeights {
  Matrix<T> proj_w;    // d_proj × d_in
  Vector<T> proj_b;    // d_proj
  Matrix<T> attn_v_w;  // d_attn × d_proj, tanh branch
  Vector<T> attn_v_b;
  Matrix<T> attn_u_w;  // d_attn × d_proj, sigmoid gate
  Vector<T> attn_u_b;
  Matrix<T> attn_w_w;  // 1 × d_attn
  Vector<T> attn_w_b;  // 1
  Matrix<T> pred_w;    // n_out × d_proj
  Vector<T> pred_b;

  /// Calls f(name, member pointer) in canonical order.
  template <typename F>
  static void for_each_member(F&& f) {
    f(kTensorNames[0], &ModelWeights::proj_w);
    f(kTensorNames[1], &ModelWeights::proj_b);
    f(kTensorNames[2], &ModelWeights::attn_v_w);
    f(kTensorNames[3], &ModelWeights::attn_v_b);
    f(kTensorNames[4], &ModelWeights::attn_u_w);
    f(kTensorNames[5], &ModelWeights::attn_u_b);
    f(kTensorNames[6], &ModelWeights::attn_w_w);
    f(kTensorNames[7], &ModelWeights::attn_w_b);
    f(kTensorNames[8], &ModelWeights::pred_w);
    f(kTensorNames[9], &ModelWeights::pred_b);
  }

  template <typename F>
  void for_each(F&& f) {
    for_each_member([&](std::string_view name, auto mp) { f(name, this->*mp); });
  }
  template <typename F>
  void for_each(F&& f) const {
    for_each_member([&](std::string_view name, auto mp) { f(name, this->*mp); });
  }

  static ModelWeights zeros(const ModelDims& d) {
    ModelWeights w;
    w.proj_w = Matrix<T>::Zero(d.d_proj, d.d_in);
    w.proj_b = Vector<T>::Zero(d.d_proj);
    w.attn_v_w = Matrix<T>::Zero(d.d_attn, d.d_proj);
    w.attn_v_b = Vector<T>::Zero(d.d_attn);
    w.attn_u_w = Matrix<T>::Zero(d.d_attn, d.d_proj);
    w.attn_u_b = Vector<T>::Zero(d.d_attn);
    w.attn_w_w = Matrix<T>::Zero(1, d.d_attn);
    w.attn_w_b = Vector<T>::Zero(1);
    w.pred_w = Matrix<T>::Zero(d.n_out, d.d_proj);
    w.pred_b = Vector<T>::Zero(d.n_out);
    return w;
  }

  ModelWeights zeros_like() const { return zeros(dims()); }

  ModelDims dims() const {
    return {static_cast<int>(proj_w.cols()), static_cast<int>(proj_w.rows()),
            static_cast<int>(attn_v_w.rows()), static_cast<int>(pred_w.rows())};
  }

  bool shape_matches(const ModelWeights& o) const {
    bool ok = true;
    for_each_member([&](std::string_view, auto mp) {
      ok = ok && (this->*mp).rows() == (o.*mp).rows() && (this->*mp).cols() == (o.*mp).cols();
    });
    return ok;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  /// Concatenation of all tensors in canonical order.
  Vector<T> flatten() const {
    Vector<T> out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index off = 0;
    for_each([&](std::string_view, const auto& t) {
      out.segment(off, t.size()) = Eigen::Map<const Vector<T>>(t.data(), t.size());
      off += t.size();
    });
    return out;
  }

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out;
    out.proj_w = proj_w.template cast<U>();
    out.proj_b = proj_b.template cast<U>();
    out.attn_v_w = attn_v_w.template cast<U>();
    out.attn_v_b = attn_v_b.template cast<U>();
    out.attn_u_w = attn_u_w.template cast<U>();
    out.attn_u_b = attn_u_b.template cast<U>();
    out.attn_w_w = attn_w_w.template cast<U>();
    out.attn_w_b = attn_w_b.template cast<U>();
    out.pred_w = pred_w.template cast<U>();
    out.pred_b = pred_b.template cast<U>();
    return out;
  }

  bool operator==(const ModelWeights& o) const {
    if (!shape_matches(o)) return false;
    bool eq = true;
    for_each_member([&](std::string_view, auto mp) { eq = eq && (this->*mp) == (o.*mp); });
    return eq;
  }
};

template <typename T>
using Gradients = ModelWeights<T>;

/// Applies f(name, a_tensor, b_tensor) over two congruent weight sets.
template <typename T, typename A, typename B, typename F>
void zip_tensors(A& a, B& b, F&& f) {
  ModelWeights<T>::for_each_member([&](std::string_view name, auto mp) { f(name, a.*mp, b.*mp); });
}

/// Standard deviation targeted by the initializer for a tensor with this fan-in.
inline double init_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

/// He-normal initialisation truncated at ±2σ; biases are zero.
template <typename T = double>
ModelWeights<T> init_weights(const ModelDims& dims, std::uint64_t seed) {
  require(dims.valid(), "init_weights: all model dimensions must be >= 1");
  auto w = ModelWeights<T>::zeros(dims);
  w.for_each([&](std::string_view name, auto& t) {
    if (name.ends_with(".bias")) return;
    const double sigma = init_std(static_cast<int>(t.cols()));
    Engine eng = make_engine(StreamKey(seed).with("init").with(name));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      double z;
      do {
        z = normal(eng);
      } while (std::abs(z) > 2.0);
      t.data()[i] = static_cast<T>(sigma * z);
    }
  });
  return w;
}

template <typename T>
struct ForwardTrace {
  Matrix<T> X;         // M × d_in input
  Matrix<T> Z;         // pre-activation projection
  Matrix<T> H;         // M × d_proj
  Matrix<T> attn_tanh; // tanh branch, before dropout
  Matrix<T> attn_gate; // sigmoid branch, before dropout
  Matrix<T> mask_tanh; // inverted-dropout multipliers; empty in eval mode
  Matrix<T> mask_gate;
  Matrix<T> gated;     // (T ⊙ mask_t) ⊙ (G ⊙ mask_g)
  Vector<T> scores;    // pre-softmax e
  Vector<T> A;         // attention weights
  Vector<T> h_bag;
  Vector<T> s;         // logits
  Mode mode = Mode::kEval;
  bool projection_relu = true;

  Eigen::Index instances() const { return H.rows(); }
};

namespace detail {

template <typename T>
Vector<T> softmax(const Vector<T>& e) {
  const T mx = e.maxCoeff();
  Vector<T> p = (e.array() - mx).exp().matrix();
  return p / p.sum();
}

template <typename T>
void gated_hidden(const ModelWeights<T>& w, const Matrix<T>& H, Matrix<T>& tanh_out,
                  Matrix<T>& gate_out) {
  tanh_out = ((H * w.attn_v_w.transpose()).rowwise() + w.attn_v_b.transpose()).array().tanh().matrix();
  Matrix<T> pre = (H * w.attn_u_w.transpose()).rowwise() + w.attn_u_b.transpose();
  gate_out = (T(1) / (T(1) + (-pre.array()).exp())).matrix();
}

}  // namespace detail

/// Attention weights for projected embeddings H (M × d_proj), no dropout.
template <typename T>
Vector<T> attention_scores(const ModelWeights<T>& w, const Matrix<T>& H) {
  if (H.rows() == 0) throw InvalidArgument("attention_scores: empty bag (M = 0)");
  require(H.cols() == w.attn_v_w.cols(), "attention_scores: H width does not match d_proj");
  Matrix<T> th, gt;
  detail::gated_hidden(w, H, th, gt);
  Vector<T> e = (th.cwiseProduct(gt) * w.attn_w_w.transpose()).col(0).array() + w.attn_w_b(0);
  return detail::softmax(e);
}

/// Attention-weighted average of the rows of H.
template <typename T>
Vector<T> attn_pool(const Vector<T>& A, const Matrix<T>& H) {
  require(A.size() == H.rows(), "attn_pool: attention length does not match instance count");
  require(H.rows() > 0, "attn_pool: empty bag");
  return H.transpose() * A;
}

template <typename T, typename Derived>
ForwardTrace<T> forward_bag(const ModelWeights<T>& w, const Eigen::MatrixBase<Derived>& bag, Mode mode,
                            Engine* rng = nullptr, const ForwardOptions& opt = {}) {
  if (bag.rows() == 0) throw InvalidArgument("forward_bag: empty bag (M = 0)");
  require(bag.cols() == w.proj_w.cols(), "forward_bag: bag width does not match d_in");
  if (!bag.allFinite()) throw NonFiniteError("forward_bag: bag contains non-finite values");
  require(mode == Mode::kEval || rng != nullptr || opt.dropout == 0.0,
          "forward_bag: training mode with dropout needs an rng");

  ForwardTrace<T> tr;
  tr.mode = mode;
  tr.projection_relu = opt.projection_relu;
  tr.X = bag.template cast<T>();
  tr.Z = (tr.X * w.proj_w.transpose()).rowwise() + w.proj_b.transpose();
  tr.H = opt.projection_relu ? Matrix<T>(tr.Z.cwiseMax(T(0))) : tr.Z;
  detail::gated_hidden(w, tr.H, tr.attn_tanh, tr.attn_gate);

  Matrix<T> t_used = tr.attn_tanh;
  Matrix<T> g_used = tr.attn_gate;
  if (mode == Mode::kTrain && opt.dropout > 0.0) {
    const T keep_scale = T(1) / T(1.0 - opt.dropout);
    std::bernoulli_distribution keep(1.0 - opt.dropout);
    auto draw = [&](Matrix<T>& mask, Eigen::Index r, Eigen::Index c) {
      mask.resize(r, c);
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? keep_scale : T(0);
    };
    draw(tr.mask_tanh, t_used.rows(), t_used.cols());
    draw(tr.mask_gate, g_used.rows(), g_used.cols());
    t_used = t_used.cwiseProduct(tr.mask_tanh);
    g_used = g_used.cwiseProduct(tr.mask_gate);
  }
  tr.gated = t_used.cwiseProduct(g_used);
  tr.scores = (tr.gated * w.attn_w_w.transpose()).col(0).array() + w.attn_w_b(0);
  tr.A = detail::softmax(tr.scores);
  tr.h_bag = attn_pool(tr.A, tr.H);
  tr.s = w.pred_w * tr.h_bag + w.pred_b;
  return tr;
}

template <typename T>
Gradients<T> backward_bag(const ModelWeights<T>& w, const ForwardTrace<T>& tr, const Vector<T>& dlogits) {
  const ModelDims d = w.dims();
  require(tr.X.cols() == d.d_in && tr.H.cols() == d.d_proj && tr.attn_tanh.cols() == d.d_attn &&
              tr.s.size() == d.n_out,
          "backward_bag: trace does not match weights");
  require(dlogits.size() == d.n_out, "backward_bag: dLoss/ds has wrong length");

  Gradients<T> g = w.zeros_like();
  // prediction layer
  g.pred_w = dlogits * tr.h_bag.transpose();
  g.pred_b = dlogits;
  const Vector<T> dh_bag = w.pred_w.transpose() * dlogits;

  // pooling: h = Hᵀ A
  Matrix<T> dH = tr.A * dh_bag.transpose();
  const Vector<T> dA = tr.H * dh_bag;
  // softmax over instances
  const T dot = tr.A.dot(dA);
  const Vector<T> de = tr.A.cwiseProduct((dA.array() - dot).matrix());

  g.attn_w_w = de.transpose() * tr.gated;
  g.attn_w_b(0) = de.sum();
  const Matrix<T> dgated = de * w.attn_w_w;  // M × d_attn

  Matrix<T> t_used = tr.attn_tanh;
  Matrix<T> g_used = tr.attn_gate;
  const bool dropped = tr.mask_tanh.size() > 0;
  if (dropped) {
    t_used = t_used.cwiseProduct(tr.mask_tanh);
    g_used = g_used.cwiseProduct(tr.mask_gate);
  }
  Matrix<T> dt = dgated.cwiseProduct(g_used);
  Matrix<T> dg = dgated.cwiseProduct(t_used);
  if (dropped) {
    dt = dt.cwiseProduct(tr.mask_tanh);
    dg = dg.cwiseProduct(tr.mask_gate);
  }
  const Matrix<T> dpre_v = dt.cwiseProduct((T(1) - tr.attn_tanh.array().square()).matrix());
  const Matrix<T> dpre_u =
      dg.cwiseProduct((tr.attn_gate.array() * (T(1) - tr.attn_gate.array())).matrix());

  g.attn_v_w = dpre_v.transpose() * tr.H;
  g.attn_v_b = dpre_v.colwise().sum().transpose();
  g.attn_u_w = dpre_u.transpose() * tr.H;
  g.attn_u_b = dpre_u.colwise().sum().transpose();
  dH += dpre_v * w.attn_v_w + dpre_u * w.attn_u_w;

  Matrix<T> dZ = dH;
  if (tr.projection_relu) dZ = (tr.Z.array() > T(0)).select(dH, T(0));
  g.proj_w = dZ.transpose() * tr.X;
  g.proj_b = dZ.colwise().sum().transpose();
  return g;
}

}  // namespace fedbag
