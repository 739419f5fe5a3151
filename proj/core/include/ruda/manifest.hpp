#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ruda/adapt.hpp"
#include "ruda/nets.hpp"

namespace ruda {

// ---- experiment manifest ----------------------------------------------------
//
// Flat key/value text with dotted section prefixes:
//
//   seed = 7
//   data.kind = "synthetic"
//   data.shift = [3, 0]
//   adapt.gamma_dec = 1e-4
//
// Unknown keys, type errors and constraint violations are rejected with the
// offending key named.  A parsed manifest serializes back to an equivalent
// file (round-trip stable).

struct SyntheticSpec {
  int num_classes = 5;
  int per_class = 200;
  int dim = 2;
  std::vector<double> shift;  // defaults to zeros of length dim
  double rotation = 0.0;
  double noise_sd = 0.3;
  double radius = 8.0;

  bool operator==(const SyntheticSpec&) const = default;
};

struct DataSpec {
  enum class Kind { synthetic, idx, rudx };
  Kind kind = Kind::synthetic;
  SyntheticSpec synthetic;
  std::string source_images, source_labels;  // idx kind
  std::string target_images, target_labels;
  std::string source_rudx, target_rudx;  // rudx kind

  enum class Resample { none, linear_decay };
  Resample resample = Resample::none;
  double decay_start = 1.0;
  double decay_end = 0.3;
  std::vector<int> keep_classes;  // empty keeps all (partial subsetting)
  bool balance_source = false;
  int subsample_source = 0;  // 0 keeps everything
  int subsample_target = 0;

  bool operator==(const DataSpec&) const = default;
};

struct ModelSpecs {
  EncoderKind encoder = EncoderKind::mlp;
  int feature_dim = 64;
  std::vector<int> hidden = {64, 64};
  std::array<int, 2> disc_hidden = {500, 500};

  bool operator==(const ModelSpecs&) const = default;
};

struct PretrainSpec {
  int epochs = 30;
  double lr = 1e-3;
  int batch = 64;
  OptimizerKind optimizer = OptimizerKind::adam;

  bool operator==(const PretrainSpec&) const = default;
};

struct ExperimentManifest {
  std::string description;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  bool warmup_set = false;     // true when adapt.warmup was given explicitly
  bool mix_ratio_set = false;  // true when adapt.mix_ratio was given explicitly
  DataSpec data;
  ModelSpecs model;
  PretrainSpec pretrain;
  AdaptationConfig adapt;

  // warmup_set is parse bookkeeping, not manifest content
  bool operator==(const ExperimentManifest& o) const {
    return description == o.description && output_dir == o.output_dir &&
           seed == o.seed && data == o.data && model == o.model &&
           pretrain == o.pretrain && adapt == o.adapt;
  }

  // All defaults resolved and constraints checked; gamma_dis resolves to
  // 2*gamma_dec when absent, partial mode defaults warmup to 0 and
  // mix_ratio to 0.5.
  void resolve_and_validate();

  std::string serialize() const;
  static ExperimentManifest parse_text(const std::string& text);
  static ExperimentManifest parse_file(const std::filesystem::path& path);
  void write_file(const std::filesystem::path& path) const;
};

// string <-> enum helpers shared with the CLI
std::string to_string(AdaptMode mode);
std::string to_string(Ablation ablation);
std::string to_string(OptimizerKind opt);
std::string to_string(EncoderKind kind);
AdaptMode parse_adapt_mode(const std::string& s);
Ablation parse_ablation(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);
EncoderKind parse_encoder_kind(const std::string& s);

}  // namespace ruda
