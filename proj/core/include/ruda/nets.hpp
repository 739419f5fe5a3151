#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ruda/data.hpp"
#include "ruda/linalg.hpp"
#include "ruda/nn.hpp"

namespace ruda {

enum class EncoderKind { conv_lenet, mlp };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::mlp;
  InstanceShape input_shape;
  int feature_dim = 500;
  std::vector<int> hidden_sizes = {64, 64};  // mlp only

  void validate() const;
  bool operator==(const EncoderSpec&) const = default;
};

struct ClassifierSpec {
  int feature_dim = 500;
  int num_classes = 0;  // K_s; softmax over the logits

  void validate() const;
  bool operator==(const ClassifierSpec&) const = default;
};

struct DiscriminatorSpec {
  int feature_dim = 500;
  std::array<int, 2> hidden = {500, 500};  // 2-way softmax head on top

  void validate() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

// The four trainable components.  source_encoder and classifier are frozen
// after pretraining and must stay bit-identical through any adaptation run.
struct ModelBundle {
  EncoderSpec encoder_spec;
  ClassifierSpec classifier_spec;
  DiscriminatorSpec discriminator_spec;

  nn::Net source_encoder;
  nn::Net target_encoder;
  nn::Net classifier;
  nn::Net discriminator;

  bool source_encoder_frozen = false;
  bool target_encoder_frozen = false;
  bool classifier_frozen = false;
  bool discriminator_frozen = false;
};

enum class WhichEncoder { source, target };

// Parameters initialized deterministically from the seed; the target encoder
// starts as a copy of the source encoder.
ModelBundle build_models(const EncoderSpec& enc, const ClassifierSpec& cls,
                         const DiscriminatorSpec& disc, std::uint64_t seed);

// Forward through the chosen encoder.  Throws NumericError if the output is
// not finite (divergence signal).
Mat encode(ModelBundle& bundle, WhichEncoder which, const Mat& inputs);

// Softmax class probabilities, one row per feature row.
Mat classify(ModelBundle& bundle, const Mat& features);

// Probability that each feature row came from the source domain.
Vec discriminate(ModelBundle& bundle, const Mat& features);

// Trainable cluster centers in feature space, one row per source class.
struct Centroids {
  Mat z;     // K_s x F
  Mat grad;  // same shape, written by the clustering/dissimilarity objectives

  explicit Centroids(int num_classes = 0, int feature_dim = 0)
      : z(Mat::Zero(num_classes, feature_dim)),
        grad(Mat::Zero(num_classes, feature_dim)) {}
};

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
  ModelBundle bundle;
  std::optional<Mat> centroids;
  std::uint64_t iteration = 0;
};

// Versioned binary container; written to a temp file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ruda
