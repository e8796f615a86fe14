#pragma once

// Variational information bottleneck binary classifier.
//
//   x -> tanh(W1 x + b1) -> tanh(W2 a1 + b2) -> (mu, logvar)
//   z = mu + exp(logvar / 2) * eps,  eps ~ N(0, I)
//   logits = Wc z + bc
//
// Objective per example: mean over MC draws of CE(softmax(logits), y)
//                        + beta * KL(N(mu, diag(exp(logvar))) || N(0, I)).
// All matrices are column-per-example.

#include "alert/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace alert::vib {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct HyperParams {
  int hidden_dim = 2048;
  int latent_dim = 640;
  double beta = 5e-4;
  int mc_samples = 5;
  double lr = 1e-4;
  int epochs = 15;
  std::uint64_t seed = 0;
  int batch_size = 32;

  /// Basic sanity always; the search ranges only when `search_mode`.
  void validate(bool search_mode = false) const;

  bool operator==(const HyperParams&) const = default;
};

struct EpochStats {
  double loss = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double accuracy = 0.0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::string to_csv() const;
  bool operator==(const TrainHistory&) const = default;
};

enum ParamIndex : int {
  kW1, kB1, kW2, kB2, kWMu, kBMu, kWLogvar, kBLogvar, kWCls, kBCls, kParamCount
};

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Params = std::array<Mat<Scalar>, kParamCount>;

using Rng = std::mt19937_64;

template <typename Scalar>
struct Model {
  HyperParams hp;
  Params<Scalar> p;  // biases are n x 1

  Eigen::Index input_dim() const { return p[kW1].cols(); }
  Eigen::Index latent_dim() const { return p[kWMu].rows(); }
  bool all_finite() const {
    return std::all_of(p.begin(), p.end(), [](const auto& m) { return m.allFinite(); });
  }
  bool operator==(const Model& o) const { return hp == o.hp && p == o.p; }
};

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
template <typename Scalar>
Model<Scalar> init_model(const HyperParams& hp, Eigen::Index input_dim) {
  if (input_dim <= 0) throw Error("input_dim must be positive");
  hp.validate(false);
  Model<Scalar> m;
  m.hp = hp;
  Rng rng(hp.seed);
  const Eigen::Index h = hp.hidden_dim;
  const Eigen::Index l = hp.latent_dim;
  auto layer = [&](int w, int b, Eigen::Index out, Eigen::Index in) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    m.p[w].resize(out, in);
    for (Eigen::Index j = 0; j < in; ++j)
      for (Eigen::Index i = 0; i < out; ++i) m.p[w](i, j) = static_cast<Scalar>(scale * u(rng));
    m.p[b] = Mat<Scalar>::Zero(out, 1);
  };
  layer(kW1, kB1, h, input_dim);
  layer(kW2, kB2, h, h);
  layer(kWMu, kBMu, l, h);
  layer(kWLogvar, kBLogvar, l, h);
  layer(kWCls, kBCls, 2, l);
  return m;
}

template <typename Scalar>
struct Encoded {
  Mat<Scalar> a1, a2;      // hidden activations
  Mat<Scalar> mu;          // latent x B
  Mat<Scalar> logvar;      // clamped
  Mat<Scalar> logvar_raw;  // before clamping
};

template <typename Scalar>
Encoded<Scalar> encode_batch(const Model<Scalar>& m, const Mat<Scalar>& x) {
  if (x.rows() != m.input_dim()) throw Error("dimension mismatch");
  Encoded<Scalar> e;
  e.a1 = ((m.p[kW1] * x).colwise() + m.p[kB1].col(0)).array().tanh().matrix();
  e.a2 = ((m.p[kW2] * e.a1).colwise() + m.p[kB2].col(0)).array().tanh().matrix();
  e.mu = (m.p[kWMu] * e.a2).colwise() + m.p[kBMu].col(0);
  e.logvar_raw = (m.p[kWLogvar] * e.a2).colwise() + m.p[kBLogvar].col(0);
  e.logvar = e.logvar_raw.cwiseMax(static_cast<Scalar>(kLogvarMin))
                 .cwiseMin(static_cast<Scalar>(kLogvarMax));
  return e;
}

/// (mu, clamped logvar) of a single input.
template <typename Scalar>
std::pair<Vec<Scalar>, Vec<Scalar>> encode(const Model<Scalar>& m,
                                           const std::type_identity_t<Vec<Scalar>>& x) {
  if (!x.allFinite()) throw Error("non-finite input");
  auto e = encode_batch(m, Mat<Scalar>(x));
  return {e.mu.col(0), e.logvar.col(0)};
}

/// 0.5 * sum_j (mu_j^2 + exp(logvar_j) - logvar_j - 1).
template <typename DerivedA, typename DerivedB>
double kl_gaussian(const Eigen::MatrixBase<DerivedA>& mu, const Eigen::MatrixBase<DerivedB>& logvar) {
  const auto m = mu.template cast<double>().array();
  const auto lv = logvar.template cast<double>().array();
  return 0.5 * (m.square() + lv.exp() - lv - 1.0).sum();
}

/// One standard-normal matrix (latent x B) per MC sample, drawn column by column.
template <typename Scalar>
std::vector<Mat<Scalar>> draw_noise(Eigen::Index latent, Eigen::Index batch, int samples, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Mat<Scalar>> noise(static_cast<std::size_t>(samples));
  for (auto& e : noise) {
    e.resize(latent, batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index i = 0; i < latent; ++i) e(i, j) = static_cast<Scalar>(normal(rng));
  }
  return noise;
}

/// Column-wise two-class softmax, evaluated in double.
template <typename Scalar>
Eigen::Matrix2Xd softmax2(const Mat<Scalar>& logits) {
  Eigen::Matrix2Xd out(2, logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double diff = static_cast<double>(logits(1, j)) - static_cast<double>(logits(0, j));
    out(0, j) = 1.0 / (1.0 + std::exp(diff));
    out(1, j) = 1.0 / (1.0 + std::exp(-diff));
  }
  return out;
}

/// Class probabilities averaged over the given MC noise draws (2 x B).
template <typename Scalar>
Eigen::Matrix2Xd forward_proba_batch(const Model<Scalar>& m, const Mat<Scalar>& x,
                                     const std::vector<Mat<Scalar>>& noise) {
  if (noise.empty()) throw Error("mc_samples must be >= 1");
  const auto e = encode_batch(m, x);
  const Mat<Scalar> stddev = (e.logvar.array() * static_cast<Scalar>(0.5)).exp().matrix();
  Eigen::Matrix2Xd acc = Eigen::Matrix2Xd::Zero(2, x.cols());
  for (const auto& eps : noise) {
    const Mat<Scalar> z = e.mu + stddev.cwiseProduct(eps);
    acc += softmax2<Scalar>((m.p[kWCls] * z).colwise() + m.p[kBCls].col(0));
  }
  return acc / static_cast<double>(noise.size());
}

template <typename Scalar>
Eigen::Matrix2Xd forward_proba_batch(const Model<Scalar>& m, const Mat<Scalar>& x, int mc_samples,
                                     Rng& rng) {
  if (mc_samples < 1) throw Error("mc_samples must be >= 1");
  return forward_proba_batch(m, x, draw_noise<Scalar>(m.latent_dim(), x.cols(), mc_samples, rng));
}

/// MC-averaged probability pair for one input; sums to 1.
template <typename Scalar>
Eigen::Vector2d forward_proba(const Model<Scalar>& m, const std::type_identity_t<Vec<Scalar>>& x, int mc_samples,
                              Rng& rng) {
  return forward_proba_batch(m, Mat<Scalar>(x), mc_samples, rng).col(0);
}

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;  // batch mean of per-example MC-mean cross-entropy
  double kl = 0.0;  // batch mean of KL (without beta)
  int correct = 0;  // argmax of MC-averaged probabilities
};

/// Loss and exact gradients (when `grad` is non-null) for a batch with fixed noise draws.
template <typename Scalar>
LossTerms loss_and_grad(const Model<Scalar>& m, const Mat<Scalar>& x, const std::vector<int>& y,
                        double beta, const std::vector<Mat<Scalar>>& noise,
                        std::type_identity_t<Params<Scalar>>* grad) {
  const Eigen::Index batch = x.cols();
  if (batch == 0) throw Error("empty batch");
  if (static_cast<Eigen::Index>(y.size()) != batch) throw Error("label count mismatch");
  for (int label : y) {
    if (label != 0 && label != 1) throw Error("labels must be 0 or 1");
  }
  if (noise.empty()) throw Error("mc_samples must be >= 1");

  const auto e = encode_batch(m, x);
  const Mat<Scalar> stddev = (e.logvar.array() * static_cast<Scalar>(0.5)).exp().matrix();
  const double samples = static_cast<double>(noise.size());
  const double inv_b = 1.0 / static_cast<double>(batch);

  LossTerms terms;
  Eigen::Matrix2Xd mean_proba = Eigen::Matrix2Xd::Zero(2, batch);
  Mat<Scalar> d_mu, d_logvar;
  if (grad) {
    for (int i = 0; i < kParamCount; ++i) (*grad)[i] = Mat<Scalar>::Zero(m.p[i].rows(), m.p[i].cols());
    d_mu = Mat<Scalar>::Zero(e.mu.rows(), batch);
    d_logvar = Mat<Scalar>::Zero(e.mu.rows(), batch);
  }

  double ce_sum = 0.0;
  for (const auto& eps : noise) {
    const Mat<Scalar> z = e.mu + stddev.cwiseProduct(eps);
    const Mat<Scalar> logits = (m.p[kWCls] * z).colwise() + m.p[kBCls].col(0);
    const Eigen::Matrix2Xd proba = softmax2<Scalar>(logits);
    mean_proba += proba;
    for (Eigen::Index j = 0; j < batch; ++j) {
      // log-softmax of the true class, stable for large margins
      const double l0 = static_cast<double>(logits(0, j));
      const double l1 = static_cast<double>(logits(1, j));
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      ce_sum += lse - (y[static_cast<std::size_t>(j)] == 0 ? l0 : l1);
    }
    if (grad) {
      Mat<Scalar> d_logits(2, batch);
      for (Eigen::Index j = 0; j < batch; ++j) {
        const int label = y[static_cast<std::size_t>(j)];
        d_logits(0, j) = static_cast<Scalar>((proba(0, j) - (label == 0)) * inv_b / samples);
        d_logits(1, j) = static_cast<Scalar>((proba(1, j) - (label == 1)) * inv_b / samples);
      }
      (*grad)[kWCls].noalias() += d_logits * z.transpose();
      (*grad)[kBCls] += d_logits.rowwise().sum();
      const Mat<Scalar> d_z = m.p[kWCls].transpose() * d_logits;
      d_mu += d_z;
      d_logvar.array() += d_z.array() * eps.array() * stddev.array() * static_cast<Scalar>(0.5);
    }
  }

  double kl_sum = 0.0;
  for (Eigen::Index j = 0; j < batch; ++j) kl_sum += kl_gaussian(e.mu.col(j), e.logvar.col(j));

  terms.ce = ce_sum / samples * inv_b;
  terms.kl = kl_sum * inv_b;
  terms.total = terms.ce + beta * terms.kl;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const int pred = mean_proba(1, j) >= mean_proba(0, j) ? 1 : 0;
    terms.correct += pred == y[static_cast<std::size_t>(j)];
  }

  if (grad) {
    const auto kl_scale = static_cast<Scalar>(beta * inv_b);
    d_mu += kl_scale * e.mu;
    d_logvar.array() += kl_scale * static_cast<Scalar>(0.5) * (e.logvar.array().exp() - Scalar(1));
    // clamp passes gradient only inside [min, max]
    const Mat<Scalar> d_lv_raw =
        ((e.logvar_raw.array() >= static_cast<Scalar>(kLogvarMin)) &&
         (e.logvar_raw.array() <= static_cast<Scalar>(kLogvarMax)))
            .select(d_logvar, Mat<Scalar>::Zero(d_logvar.rows(), d_logvar.cols()));

    auto& g = *grad;
    g[kWMu].noalias() = d_mu * e.a2.transpose();
    g[kBMu] = d_mu.rowwise().sum();
    g[kWLogvar].noalias() = d_lv_raw * e.a2.transpose();
    g[kBLogvar] = d_lv_raw.rowwise().sum();

    Mat<Scalar> d_a2 = m.p[kWMu].transpose() * d_mu;
    d_a2.noalias() += m.p[kWLogvar].transpose() * d_lv_raw;
    const Mat<Scalar> d_z2 = (d_a2.array() * (Scalar(1) - e.a2.array().square())).matrix();
    g[kW2].noalias() = d_z2 * e.a1.transpose();
    g[kB2] = d_z2.rowwise().sum();
    const Mat<Scalar> d_a1 = m.p[kW2].transpose() * d_z2;
    const Mat<Scalar> d_z1 = (d_a1.array() * (Scalar(1) - e.a1.array().square())).matrix();
    g[kW1].noalias() = d_z1 * x.transpose();
    g[kB1] = d_z1.rowwise().sum();
  }
  return terms;
}

/// Adaptive moment optimizer state (decay 0.9 / 0.999, eps 1e-8).
template <typename Scalar>
class Adam {
 public:
  explicit Adam(const Model<Scalar>& m, double lr) : lr_(lr) {
    for (int i = 0; i < kParamCount; ++i) {
      m1_[i] = Mat<Scalar>::Zero(m.p[i].rows(), m.p[i].cols());
      m2_[i] = m1_[i];
    }
  }

  void step(Model<Scalar>& m, const Params<Scalar>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    const auto step = static_cast<Scalar>(lr_ / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    for (int i = 0; i < kParamCount; ++i) {
      m1_[i] = static_cast<Scalar>(kBeta1) * m1_[i] + static_cast<Scalar>(1.0 - kBeta1) * g[i];
      m2_[i].array() = static_cast<Scalar>(kBeta2) * m2_[i].array() +
                       static_cast<Scalar>(1.0 - kBeta2) * g[i].array().square();
      m.p[i].array() -=
          step * m1_[i].array() / ((m2_[i].array() * inv_c2).sqrt() + static_cast<Scalar>(kEps));
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  Params<Scalar> m1_, m2_;
};

/// Mini-batch training; `features` holds one example per row. Deterministic in hp.seed.
template <typename Scalar>
TrainHistory train(Model<Scalar>& m, const Mat<Scalar>& features, const std::vector<int>& labels) {
  const HyperParams& hp = m.hp;
  hp.validate(false);
  const Eigen::Index n = features.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw Error("label count mismatch");
  if (features.cols() != m.input_dim()) throw Error("dimension mismatch");
  const bool has0 = std::find(labels.begin(), labels.end(), 0) != labels.end();
  const bool has1 = std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (!has0 || !has1) throw Error("training data must contain both classes");

  // separate stream from init so that training noise does not alias initial weights
  Rng rng(hp.seed ^ 0x5DEECE66DULL);
  Adam<Scalar> opt(m, hp.lr);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Params<Scalar> grad;
  TrainHistory history;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    int correct = 0;
    for (Eigen::Index start = 0; start < n; start += hp.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(hp.batch_size, n - start);
      Mat<Scalar> xb(m.input_dim(), len);
      std::vector<int> yb(static_cast<std::size_t>(len));
      for (Eigen::Index j = 0; j < len; ++j) {
        const auto idx = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = features.row(idx).transpose();
        yb[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(idx)];
      }
      const auto noise = draw_noise<Scalar>(m.latent_dim(), len, hp.mc_samples, rng);
      const LossTerms t = loss_and_grad(m, xb, yb, hp.beta, noise, &grad);
      opt.step(m, grad);
      const double w = static_cast<double>(len);
      stats.loss += t.total * w;
      stats.ce += t.ce * w;
      stats.kl += t.kl * w;
      correct += t.correct;
    }
    const double nn = static_cast<double>(n);
    stats.loss /= nn;
    stats.ce /= nn;
    stats.kl /= nn;
    stats.accuracy = correct / nn;
    history.epochs.push_back(stats);
  }
  if (!m.all_finite()) throw Error("training diverged: non-finite parameters");
  return history;
}

// Binary layout: magic "ALVB" | u32 version | u32 scalar bytes | hyperparameters |
// per parameter: u32 rows | u32 cols | column-major values.
template <typename Scalar>
std::vector<std::uint8_t> serialize(const Model<Scalar>& m);
template <typename Scalar>
Model<Scalar> deserialize(const std::vector<std::uint8_t>& bytes);

template <typename Scalar>
void save_model(const Model<Scalar>& m, const std::filesystem::path& path);
template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& path);

}  // namespace alert::vib
