#pragma once

#include <vector>

#include "ruda/linalg.hpp"
#include "ruda/nets.hpp"

namespace ruda::losses {

// Every log in this module is evaluated on a value clamped to at least
// kProbEps; all outputs are finite for all valid inputs.
inline constexpr double kProbEps = 1e-8;

// Student-t soft assignments of instances to centroids; rows sum to 1.
struct SoftAssignment {
  Mat q;  // N x K
  double alpha = 1.0;
};

// Sharpened, frequency-normalized target distribution (treated as a constant
// inside the clustering objective).
struct AuxiliaryDistribution {
  Mat p;  // N x K
  Vec f;  // soft cluster frequencies, f_c = sum_i q_ic
};

// K x K matrix whose column c holds the classifier's prediction for
// centroid c.
struct CentroidPredictionMatrix {
  Mat a;
};

// ---- pure objective values (and input-space gradients) ---------------------

// Mean over the batch of log p(label | instance); to be maximized, always <= 0.
double classification_loss(const Mat& probs, const std::vector<int>& labels);
Mat classification_loss_grad_probs(const Mat& probs,
                                   const std::vector<int>& labels);

// Standard adversarial objective for the discriminator; to be maximized.
double discriminator_loss(const Vec& d_source, const Vec& d_target);
void discriminator_loss_grads(const Vec& d_source, const Vec& d_target,
                              Vec& grad_source, Vec& grad_target);

// Inverted-label generator objective for the target encoder; to be maximized.
double encoder_loss(const Vec& d_target);
Vec encoder_loss_grad(const Vec& d_target);

// q_ic proportional to (1 + ||z_i - z_c||^2 / alpha)^(-(alpha+1)/2).
SoftAssignment soft_assign(const Mat& features, const Mat& centroids,
                           double alpha = 1.0);

// p_ic proportional to q_ic^2 / f_c, rows normalized.
AuxiliaryDistribution auxiliary_dist(const SoftAssignment& q);

// KL(P || Q); to be minimized, always >= 0.
double clustering_loss(const AuxiliaryDistribution& p, const SoftAssignment& q);

// Gradients of KL(P || Q(features, centroids)) with P held constant.
void clustering_loss_grads(const Mat& features, const Mat& centroids,
                           double alpha, const Mat& p, Mat& grad_features,
                           Mat& grad_centroids);

// Frobenius norm of the off-diagonal of A^T A; to be minimized.
double dissimilarity_loss(const CentroidPredictionMatrix& a);
Mat dissimilarity_loss_grad(const CentroidPredictionMatrix& a);  // dL/dA

// ---- objectives composed with the networks ---------------------------------
//
// Each function zeroes the gradient buffers of exactly the parameter groups
// its loss updates, runs forward/backward, and leaves the gradients there.
// Gradient buffers of pass-through components are cleared before returning.

// L_cla; gradients -> source encoder and classifier.
double classification_objective(ModelBundle& bundle, const Mat& inputs,
                                const std::vector<int>& labels);

// L_adv; gradients -> discriminator only (features are constants).
double adversarial_objective(ModelBundle& bundle, const Mat& source_inputs,
                             const Mat& target_inputs);

// L_enc; gradients -> target encoder only.
double encoder_objective(ModelBundle& bundle, const Mat& target_inputs);

// L_dec; gradients -> target encoder and centroids.
double clustering_objective(ModelBundle& bundle, Centroids& centroids,
                            const Mat& target_inputs, double alpha = 1.0);

// L_dis; gradients -> centroids only (classifier stays frozen).
double dissimilarity_objective(ModelBundle& bundle, Centroids& centroids);

// Forward-only values, used for loss traces when a loss is not being applied.
double clustering_value(ModelBundle& bundle, const Centroids& centroids,
                        const Mat& target_inputs, double alpha = 1.0);
double dissimilarity_value(ModelBundle& bundle, const Centroids& centroids);

}  // namespace ruda::losses
