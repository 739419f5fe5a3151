#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ruda/linalg.hpp"
#include "ruda/rng.hpp"

namespace ruda {

// Shape of a single instance.  Flat feature vectors have channels == 0,
// images carry channels/height/width; dim is always the flattened size.
struct InstanceShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int dim = 0;

  static InstanceShape flat(int d) { return {0, 0, 0, d}; }
  static InstanceShape image(int c, int h, int w) { return {c, h, w, c * h * w}; }
  bool is_image() const { return channels > 0; }
  bool operator==(const InstanceShape&) const = default;
};

// Immutable collection of instances with optional labels in
// [0, label_domain_size).  Instances are stored one per row; images are
// flattened channel-major (c, y, x).
class DomainDataset {
 public:
  DomainDataset() = default;
  DomainDataset(Mat instances, InstanceShape shape,
                std::optional<std::vector<int>> labels, int label_domain_size,
                std::string name);

  int size() const { return static_cast<int>(instances_.rows()); }
  const Mat& instances() const { return instances_; }
  const InstanceShape& shape() const { return shape_; }
  bool labeled() const { return labels_.has_value(); }
  const std::vector<int>& labels() const;
  int label_domain_size() const { return label_domain_size_; }
  const std::string& name() const { return name_; }

  // per-class instance counts, length label_domain_size (labeled only)
  std::vector<int> class_counts() const;

 private:
  Mat instances_;
  InstanceShape shape_;
  std::optional<std::vector<int>> labels_;
  int label_domain_size_ = 0;
  std::string name_;
};

// One training batch.  origin_mask marks rows drawn from the source pool
// (only meaningful for mixed batches in partial mode).
struct Minibatch {
  Mat inputs;
  std::optional<std::vector<int>> labels;
  std::optional<std::vector<bool>> origin_mask;
};

// ---- ingestion ------------------------------------------------------------

// Reads an IDX image/label file pair (the MNIST container format).
// Pixels are scaled to [0,1]; label_domain_size is max(label)+1 unless
// overridden.  Throws IoError on magic/count/layout problems.
DomainDataset load_idx(const std::filesystem::path& image_path,
                       const std::filesystem::path& label_path,
                       int label_domain_size = 0);

// Writes a labeled image dataset as an IDX pair (values quantized to u8).
void save_idx(const DomainDataset& ds, const std::filesystem::path& image_path,
              const std::filesystem::path& label_path);

// Versioned flat-vector container ("RUDX1"): header, row-major float32
// instances, u16 labels.
void save_rudx(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset load_rudx(const std::filesystem::path& path);

// ---- synthetic domain pairs ------------------------------------------------

// Class means of the synthetic blobs: K points spaced on a circle of the
// given radius in the first two coordinates, zero elsewhere.
Mat synthetic_class_means(int num_classes, int dim, double radius);

// Gaussian-blob source domain plus a target domain whose blobs are moved by
// a rotation (first two coordinates) followed by a shift, with fresh noise.
// Both domains are labeled and deterministic in the seed.
std::pair<DomainDataset, DomainDataset> make_synthetic_pair(
    int num_classes, int per_class, int dim, const Vec& shift,
    double rotation_angle, double noise_sd, std::uint64_t seed,
    double radius = 8.0);

// ---- label-distribution resampling ------------------------------------------

// Keeps floor(n_k * r_k) instances of class k, sampled without replacement,
// with r_k linearly interpolated from start_ratio (class 0) to end_ratio
// (class K-1).
DomainDataset resample_linear_decay(const DomainDataset& ds, double start_ratio,
                                    double end_ratio, std::uint64_t seed);

// Restricts to instances whose label is in keep_classes.  Labels are NOT
// re-indexed; label_domain_size stays at the source value.
DomainDataset subset_partial(const DomainDataset& ds,
                             const std::set<int>& keep_classes);

// Resamples with replacement so every non-empty class reaches the maximum
// class count.  Original instances are kept; extras are appended.
DomainDataset balance_source(const DomainDataset& ds, std::uint64_t seed);

// Uniform random subset of n instances without replacement (n == 0 or
// n >= size returns the dataset unchanged).
DomainDataset subsample(const DomainDataset& ds, int n, std::uint64_t seed);

// ---- batch sampling ----------------------------------------------------------

// Draws round(M*mix_ratio) rows from the source pool (labels discarded,
// origin_mask true) and the remainder from the target pool, then shuffles.
// Rows are drawn uniformly with replacement.
Minibatch sample_minibatch(const DomainDataset& target,
                           const DomainDataset& source, int batch_size,
                           double mix_ratio, Rng& rng);

}  // namespace ruda
