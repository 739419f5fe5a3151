#include "ruda/losses.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ruda/errors.hpp"
#include "ruda/nn.hpp"

namespace ruda::losses {

namespace {

double clamp_prob(double p) { return std::min(std::max(p, kProbEps), 1.0); }

// derivative of log(clamp(p, eps, 1-eps)) w.r.t. p, zero where the clamp is
// active
double dlog_clamped(double p, double lo, double hi) {
  if (p < lo || p > hi) return 0.0;
  return 1.0 / p;
}

// squared Euclidean distances between rows of z and rows of c
Mat pairwise_sqdist(const Mat& z, const Mat& c) {
  Mat d(z.rows(), c.rows());
  for (int i = 0; i < z.rows(); ++i) {
    d.row(i) = (c.rowwise() - z.row(i)).rowwise().squaredNorm().transpose();
  }
  return d;
}

}  // namespace

// ---- classification ----------------------------------------------------------

double classification_loss(const Mat& probs, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != probs.rows()) {
    throw std::invalid_argument("classification_loss: batch size mismatch");
  }
  const int m = static_cast<int>(probs.rows());
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= probs.cols()) {
      throw std::invalid_argument("classification_loss: label " +
                                  std::to_string(y) + " out of range");
    }
    total += std::log(clamp_prob(probs(i, y)));
  }
  return total / m;
}

Mat classification_loss_grad_probs(const Mat& probs,
                                   const std::vector<int>& labels) {
  const int m = static_cast<int>(probs.rows());
  Mat grad = Mat::Zero(probs.rows(), probs.cols());
  for (int i = 0; i < m; ++i) {
    const double p = probs(i, labels[i]);
    if (p >= kProbEps) grad(i, labels[i]) = 1.0 / (std::min(p, 1.0) * m);
  }
  return grad;
}

// ---- adversarial pair ----------------------------------------------------------

double discriminator_loss(const Vec& d_source, const Vec& d_target) {
  double value = 0.0;
  for (int i = 0; i < d_source.size(); ++i) {
    value += std::log(std::clamp(d_source(i), kProbEps, 1.0 - kProbEps));
  }
  value /= static_cast<double>(d_source.size());
  double t = 0.0;
  for (int i = 0; i < d_target.size(); ++i) {
    t += std::log(1.0 - std::clamp(d_target(i), kProbEps, 1.0 - kProbEps));
  }
  return value + t / static_cast<double>(d_target.size());
}

void discriminator_loss_grads(const Vec& d_source, const Vec& d_target,
                              Vec& grad_source, Vec& grad_target) {
  const double ms = static_cast<double>(d_source.size());
  const double mt = static_cast<double>(d_target.size());
  grad_source.resize(d_source.size());
  grad_target.resize(d_target.size());
  for (int i = 0; i < d_source.size(); ++i) {
    const double d = d_source(i);
    grad_source(i) =
        (d >= kProbEps && d <= 1.0 - kProbEps) ? 1.0 / (d * ms) : 0.0;
  }
  for (int i = 0; i < d_target.size(); ++i) {
    const double d = d_target(i);
    grad_target(i) =
        (d >= kProbEps && d <= 1.0 - kProbEps) ? -1.0 / ((1.0 - d) * mt) : 0.0;
  }
}

double encoder_loss(const Vec& d_target) {
  double value = 0.0;
  for (int i = 0; i < d_target.size(); ++i) {
    value += std::log(std::clamp(d_target(i), kProbEps, 1.0 - kProbEps));
  }
  return value / static_cast<double>(d_target.size());
}

Vec encoder_loss_grad(const Vec& d_target) {
  const double mt = static_cast<double>(d_target.size());
  Vec grad(d_target.size());
  for (int i = 0; i < d_target.size(); ++i) {
    const double d = d_target(i);
    grad(i) = (d >= kProbEps && d <= 1.0 - kProbEps) ? 1.0 / (d * mt) : 0.0;
  }
  return grad;
}

// ---- clustering ------------------------------------------------------------------

SoftAssignment soft_assign(const Mat& features, const Mat& centroids,
                           double alpha) {
  if (centroids.rows() < 2) {
    throw std::invalid_argument("soft_assign: need at least 2 centroids");
  }
  if (alpha <= 0.0) throw std::invalid_argument("soft_assign: alpha must be > 0");
  if (features.cols() != centroids.cols()) {
    throw std::invalid_argument("soft_assign: feature dim mismatch");
  }
  const Mat u = pairwise_sqdist(features, centroids);
  const double expo = -(alpha + 1.0) / 2.0;
  Mat w = (1.0 + u.array() / alpha).pow(expo);
  SoftAssignment out;
  out.alpha = alpha;
  out.q = w.array().colwise() / w.rowwise().sum().array();
  return out;
}

AuxiliaryDistribution auxiliary_dist(const SoftAssignment& q) {
  AuxiliaryDistribution out;
  out.f = q.q.colwise().sum().transpose();
  assert((out.f.array() > 0.0).all());
  Mat num = q.q.array().square().rowwise() /
            out.f.transpose().array();  // q^2 / f
  out.p = num.array().colwise() / num.rowwise().sum().array();
  return out;
}

double clustering_loss(const AuxiliaryDistribution& p, const SoftAssignment& q) {
  if (p.p.rows() != q.q.rows() || p.p.cols() != q.q.cols()) {
    throw std::invalid_argument("clustering_loss: shape mismatch");
  }
  double kl = 0.0;
  for (int i = 0; i < p.p.rows(); ++i) {
    for (int c = 0; c < p.p.cols(); ++c) {
      const double pic = p.p(i, c);
      if (pic <= 0.0) continue;  // 0 log 0 = 0
      kl += pic * std::log(pic / std::max(q.q(i, c), kProbEps));
    }
  }
  return kl;
}

// Chain rule through q = normalize(w), w = (1 + u/alpha)^(-(alpha+1)/2),
// u_ic = ||z_i - z_c||^2, with P constant:
//   dL/dq_ic = -p_ic / q_ic            (zero where the clamp is active)
//   dL/dw_ic = (dL/dq_ic - sum_j dL/dq_ij q_ij) / S_i,  S_i = sum_j w_ij
//   dL/du_ic = dL/dw_ic * (-(alpha+1)/(2 alpha)) * w_ic / (1 + u_ic/alpha)
//   dL/dz_i  = sum_c dL/du_ic * 2 (z_i - z_c),  dL/dz_c the negation.
void clustering_loss_grads(const Mat& features, const Mat& centroids,
                           double alpha, const Mat& p, Mat& grad_features,
                           Mat& grad_centroids) {
  const Mat u = pairwise_sqdist(features, centroids);
  const Mat base = 1.0 + u.array() / alpha;
  const Mat w = base.array().pow(-(alpha + 1.0) / 2.0);
  const Vec s = w.rowwise().sum();
  const Mat q = w.array().colwise() / s.array();

  Mat gq(q.rows(), q.cols());
  for (int i = 0; i < q.rows(); ++i) {
    for (int c = 0; c < q.cols(); ++c) {
      gq(i, c) = q(i, c) >= kProbEps ? -p(i, c) / q(i, c) : 0.0;
    }
  }
  const Vec row_dot = (gq.array() * q.array()).rowwise().sum();
  const Mat gw =
      ((gq.array().colwise() - row_dot.array()).colwise() / s.array());
  const Mat gu = gw.array() * (-(alpha + 1.0) / (2.0 * alpha)) * w.array() /
                 base.array();

  const Vec row_sums = gu.rowwise().sum();
  const Vec col_sums = gu.colwise().sum().transpose();
  grad_features =
      2.0 * (features.array().colwise() * row_sums.array()).matrix() -
      2.0 * gu * centroids;
  grad_centroids =
      2.0 * (centroids.array().colwise() * col_sums.array()).matrix() -
      2.0 * gu.transpose() * features;
}

// ---- cluster dissimilarity ----------------------------------------------------

double dissimilarity_loss(const CentroidPredictionMatrix& a) {
  Mat b = a.a.transpose() * a.a;
  b.diagonal().setZero();
  return std::sqrt(b.squaredNorm());
}

Mat dissimilarity_loss_grad(const CentroidPredictionMatrix& a) {
  Mat b = a.a.transpose() * a.a;
  b.diagonal().setZero();
  const double loss = std::sqrt(b.squaredNorm());
  if (loss <= 0.0) return Mat::Zero(a.a.rows(), a.a.cols());
  // L = ||offdiag(A^T A)||_F  =>  dL/dA = 2 A offdiag(A^T A) / L
  return (2.0 / loss) * a.a * b;
}

// ---- composed objectives -------------------------------------------------------

double classification_objective(ModelBundle& bundle, const Mat& inputs,
                                const std::vector<int>& labels) {
  bundle.source_encoder.zero_gradients();
  bundle.classifier.zero_gradients();
  const Mat features = bundle.source_encoder.forward(inputs);
  const Mat probs = nn::softmax_rows(bundle.classifier.forward(features));
  const double value = classification_loss(probs, labels);
  const Mat grad_probs = classification_loss_grad_probs(probs, labels);
  const Mat grad_logits = nn::softmax_backward_rows(probs, grad_probs);
  const Mat grad_features = bundle.classifier.backward(grad_logits);
  bundle.source_encoder.backward(grad_features);
  return value;
}

double adversarial_objective(ModelBundle& bundle, const Mat& source_inputs,
                             const Mat& target_inputs) {
  bundle.discriminator.zero_gradients();
  const Mat zs = encode(bundle, WhichEncoder::source, source_inputs);
  const Mat zt = encode(bundle, WhichEncoder::target, target_inputs);

  // source part, then target part; gradients accumulate inside D
  const Mat ps = nn::softmax_rows(bundle.discriminator.forward(zs));
  const Vec ds = ps.col(0);
  const Mat pt_logits = [&] {
    Vec gds(ds.size());
    const double ms = static_cast<double>(ds.size());
    for (int i = 0; i < ds.size(); ++i) {
      const double d = ds(i);
      gds(i) = (d >= kProbEps && d <= 1.0 - kProbEps) ? 1.0 / (d * ms) : 0.0;
    }
    Mat grad_probs = Mat::Zero(ps.rows(), ps.cols());
    grad_probs.col(0) = gds;
    bundle.discriminator.backward(nn::softmax_backward_rows(ps, grad_probs));
    return bundle.discriminator.forward(zt);
  }();
  const Mat pt = nn::softmax_rows(pt_logits);
  const Vec dt = pt.col(0);
  {
    Vec gdt(dt.size());
    const double mt = static_cast<double>(dt.size());
    for (int i = 0; i < dt.size(); ++i) {
      const double d = dt(i);
      gdt(i) =
          (d >= kProbEps && d <= 1.0 - kProbEps) ? -1.0 / ((1.0 - d) * mt) : 0.0;
    }
    Mat grad_probs = Mat::Zero(pt.rows(), pt.cols());
    grad_probs.col(0) = gdt;
    bundle.discriminator.backward(nn::softmax_backward_rows(pt, grad_probs));
  }
  return discriminator_loss(ds, dt);
}

double encoder_objective(ModelBundle& bundle, const Mat& target_inputs) {
  bundle.target_encoder.zero_gradients();
  const Mat zt = bundle.target_encoder.forward(target_inputs);
  if (!zt.allFinite()) {
    throw NumericError("encoder produced non-finite features");
  }
  const Mat pt = nn::softmax_rows(bundle.discriminator.forward(zt));
  const Vec dt = pt.col(0);
  const double value = encoder_loss(dt);
  Mat grad_probs = Mat::Zero(pt.rows(), pt.cols());
  grad_probs.col(0) = encoder_loss_grad(dt);
  const Mat grad_features =
      bundle.discriminator.backward(nn::softmax_backward_rows(pt, grad_probs));
  bundle.target_encoder.backward(grad_features);
  bundle.discriminator.zero_gradients();  // pass-through only
  return value;
}

double clustering_objective(ModelBundle& bundle, Centroids& centroids,
                            const Mat& target_inputs, double alpha) {
  bundle.target_encoder.zero_gradients();
  centroids.grad.setZero();
  const Mat features = bundle.target_encoder.forward(target_inputs);
  if (!features.allFinite()) {
    throw NumericError("encoder produced non-finite features");
  }
  const SoftAssignment q = soft_assign(features, centroids.z, alpha);
  const AuxiliaryDistribution p = auxiliary_dist(q);
  const double value = clustering_loss(p, q);
  Mat grad_features, grad_centroids;
  clustering_loss_grads(features, centroids.z, alpha, p.p, grad_features,
                        grad_centroids);
  bundle.target_encoder.backward(grad_features);
  centroids.grad = grad_centroids;
  return value;
}

double dissimilarity_objective(ModelBundle& bundle, Centroids& centroids) {
  centroids.grad.setZero();
  const Mat logits = bundle.classifier.forward(centroids.z);
  const Mat probs = nn::softmax_rows(logits);  // row c = prediction for Z_c
  CentroidPredictionMatrix a{probs.transpose()};
  const double value = dissimilarity_loss(a);
  const Mat grad_a = dissimilarity_loss_grad(a);
  const Mat grad_logits = nn::softmax_backward_rows(probs, grad_a.transpose());
  centroids.grad = bundle.classifier.backward(grad_logits);
  bundle.classifier.zero_gradients();  // classifier parameters receive none
  return value;
}

double clustering_value(ModelBundle& bundle, const Centroids& centroids,
                        const Mat& target_inputs, double alpha) {
  const Mat features = bundle.target_encoder.forward(target_inputs);
  const SoftAssignment q = soft_assign(features, centroids.z, alpha);
  return clustering_loss(auxiliary_dist(q), q);
}

double dissimilarity_value(ModelBundle& bundle, const Centroids& centroids) {
  const Mat probs = nn::softmax_rows(bundle.classifier.forward(centroids.z));
  return dissimilarity_loss(CentroidPredictionMatrix{probs.transpose()});
}

}  // namespace ruda::losses
