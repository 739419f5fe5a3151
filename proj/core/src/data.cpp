#include "ruda/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ruda/errors.hpp"

namespace ruda {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr char kRudxMagic[5] = {'R', 'U', 'D', 'X', '1'};

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("truncated file while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  static_assert(std::endian::native == std::endian::little);
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated file while reading " + what);
  }
  return v;
}

std::vector<int> indices_of_class(const DomainDataset& ds, int k) {
  std::vector<int> idx;
  const auto& labels = ds.labels();
  for (int i = 0; i < ds.size(); ++i) {
    if (labels[i] == k) idx.push_back(i);
  }
  return idx;
}

DomainDataset take_rows(const DomainDataset& ds, const std::vector<int>& rows,
                        std::string name) {
  Mat out(static_cast<int>(rows.size()), ds.instances().cols());
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<int>(i)) = ds.instances().row(rows[i]);
    labels.push_back(ds.labels()[rows[i]]);
  }
  return DomainDataset(std::move(out), ds.shape(), std::move(labels),
                       ds.label_domain_size(), std::move(name));
}

}  // namespace

DomainDataset::DomainDataset(Mat instances, InstanceShape shape,
                             std::optional<std::vector<int>> labels,
                             int label_domain_size, std::string name)
    : instances_(std::move(instances)),
      shape_(shape),
      labels_(std::move(labels)),
      label_domain_size_(label_domain_size),
      name_(std::move(name)) {
  if (instances_.cols() != shape_.dim) {
    throw std::invalid_argument("dataset '" + name_ +
                                "': instance width does not match shape.dim");
  }
  if (labels_) {
    if (static_cast<int>(labels_->size()) != instances_.rows()) {
      throw std::invalid_argument("dataset '" + name_ + "': count mismatch (" +
                                  std::to_string(labels_->size()) +
                                  " labels vs " +
                                  std::to_string(instances_.rows()) +
                                  " instances)");
    }
    for (int y : *labels_) {
      if (y < 0 || y >= label_domain_size_) {
        throw std::invalid_argument("dataset '" + name_ + "': label " +
                                    std::to_string(y) + " outside [0, " +
                                    std::to_string(label_domain_size_) + ")");
      }
    }
  }
}

const std::vector<int>& DomainDataset::labels() const {
  if (!labels_) {
    throw std::invalid_argument("dataset '" + name_ + "' is unlabeled");
  }
  return *labels_;
}

std::vector<int> DomainDataset::class_counts() const {
  std::vector<int> counts(label_domain_size_, 0);
  for (int y : labels()) counts[y]++;
  return counts;
}

// ---- IDX -------------------------------------------------------------------

DomainDataset load_idx(const std::filesystem::path& image_path,
                       const std::filesystem::path& label_path,
                       int label_domain_size) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + image_path.string());
  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + label_path.string());

  const std::uint32_t img_magic = read_u32_be(img, "image magic");
  if (img_magic != kIdxImageMagic) {
    throw IoError(image_path.string() + ": malformed magic number");
  }
  const std::uint32_t n_images = read_u32_be(img, "image count");
  const std::uint32_t rows = read_u32_be(img, "image rows");
  const std::uint32_t cols = read_u32_be(img, "image cols");

  const std::uint32_t lab_magic = read_u32_be(lab, "label magic");
  if (lab_magic != kIdxLabelMagic) {
    throw IoError(label_path.string() + ": malformed magic number");
  }
  const std::uint32_t n_labels = read_u32_be(lab, "label count");
  if (n_images != n_labels) {
    throw IoError("count mismatch: " + std::to_string(n_images) +
                  " images vs " + std::to_string(n_labels) + " labels");
  }

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> buf(pixels);
  Mat instances(n_images, pixels);
  std::vector<int> labels(n_images);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), pixels)) {
      throw IoError(image_path.string() + ": truncated file");
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      instances(i, static_cast<int>(p)) = buf[p] / 255.0;
    }
    unsigned char y;
    if (!lab.read(reinterpret_cast<char*>(&y), 1)) {
      throw IoError(label_path.string() + ": truncated file");
    }
    labels[i] = y;
    max_label = std::max(max_label, int(y));
  }

  const int k = label_domain_size > 0 ? label_domain_size : max_label + 1;
  return DomainDataset(std::move(instances),
                       InstanceShape::image(1, int(rows), int(cols)),
                       std::move(labels), std::max(k, 1),
                       image_path.stem().string());
}

void save_idx(const DomainDataset& ds, const std::filesystem::path& image_path,
              const std::filesystem::path& label_path) {
  if (!ds.shape().is_image()) {
    throw std::invalid_argument("save_idx: dataset is not image shaped");
  }
  if (ds.shape().channels != 1) {
    throw std::invalid_argument("save_idx: only single-channel images");
  }
  std::ofstream img(image_path, std::ios::binary | std::ios::trunc);
  if (!img) throw IoError("cannot write " + image_path.string());
  std::ofstream lab(label_path, std::ios::binary | std::ios::trunc);
  if (!lab) throw IoError("cannot write " + label_path.string());

  write_u32_be(img, kIdxImageMagic);
  write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(img, static_cast<std::uint32_t>(ds.shape().height));
  write_u32_be(img, static_cast<std::uint32_t>(ds.shape().width));
  write_u32_be(lab, kIdxLabelMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));

  std::vector<unsigned char> buf(ds.shape().dim);
  for (int i = 0; i < ds.size(); ++i) {
    for (int p = 0; p < ds.shape().dim; ++p) {
      const double v = std::clamp(ds.instances()(i, p), 0.0, 1.0);
      buf[p] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(buf.data()), buf.size());
    const unsigned char y = static_cast<unsigned char>(ds.labels()[i]);
    lab.write(reinterpret_cast<const char*>(&y), 1);
  }
  if (!img || !lab) throw IoError("short write while saving IDX pair");
}

// ---- RUDX ------------------------------------------------------------------

void save_rudx(const DomainDataset& ds, const std::filesystem::path& path) {
  if (!ds.labeled()) {
    throw std::invalid_argument("save_rudx: dataset must be labeled");
  }
  if (ds.label_domain_size() > 0xFFFF) {
    throw std::invalid_argument("save_rudx: label domain too large for u16");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kRudxMagic, 5);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.label_domain_size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.shape().dim));
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.shape().dim; ++j) {
      write_le<float>(out, static_cast<float>(ds.instances()(i, j)));
    }
  }
  for (int y : ds.labels()) {
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(y));
  }
  if (!out) throw IoError("short write while saving " + path.string());
}

DomainDataset load_rudx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kRudxMagic, 5) != 0) {
    throw IoError(path.string() + ": malformed magic number");
  }
  const auto k = read_le<std::uint32_t>(in, "label domain size");
  const auto n = read_le<std::uint32_t>(in, "instance count");
  const auto dim = read_le<std::uint32_t>(in, "dimension");
  Mat instances(n, dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      instances(i, j) = read_le<float>(in, "instance data");
    }
  }
  std::vector<int> labels(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    labels[i] = read_le<std::uint16_t>(in, "labels");
  }
  return DomainDataset(std::move(instances), InstanceShape::flat(int(dim)),
                       std::move(labels), int(k), path.stem().string());
}

// ---- synthetic pairs ---------------------------------------------------------

Mat synthetic_class_means(int num_classes, int dim, double radius) {
  Mat means = Mat::Zero(num_classes, dim);
  for (int k = 0; k < num_classes; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / num_classes;
    means(k, 0) = radius * std::cos(angle);
    means(k, 1) = radius * std::sin(angle);
  }
  return means;
}

std::pair<DomainDataset, DomainDataset> make_synthetic_pair(
    int num_classes, int per_class, int dim, const Vec& shift,
    double rotation_angle, double noise_sd, std::uint64_t seed, double radius) {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  if (dim < 2) throw std::invalid_argument("dim must be >= 2");
  if (shift.size() != dim) {
    throw std::invalid_argument("shift must have length dim");
  }

  const Mat means = synthetic_class_means(num_classes, dim, radius);

  // rotation acts on the first two coordinates only
  Mat rot = Mat::Identity(dim, dim);
  rot(0, 0) = std::cos(rotation_angle);
  rot(0, 1) = -std::sin(rotation_angle);
  rot(1, 0) = std::sin(rotation_angle);
  rot(1, 1) = std::cos(rotation_angle);

  Rng rng(seed);
  const int n = num_classes * per_class;
  Mat source(n, dim), target(n, dim);
  std::vector<int> labels(n);
  for (int k = 0; k < num_classes; ++k) {
    for (int j = 0; j < per_class; ++j) {
      const int row = k * per_class + j;
      labels[row] = k;
      for (int d = 0; d < dim; ++d) {
        source(row, d) = means(k, d) + noise_sd * rng.normal();
      }
    }
  }
  const Mat target_means = (rot * means.transpose()).transpose();
  for (int k = 0; k < num_classes; ++k) {
    for (int j = 0; j < per_class; ++j) {
      const int row = k * per_class + j;
      for (int d = 0; d < dim; ++d) {
        target(row, d) = target_means(k, d) + shift(d) + noise_sd * rng.normal();
      }
    }
  }

  const auto shape = InstanceShape::flat(dim);
  return {DomainDataset(std::move(source), shape, labels, num_classes, "synthetic_source"),
          DomainDataset(std::move(target), shape, std::move(labels), num_classes,
                        "synthetic_target")};
}

// ---- resampling ----------------------------------------------------------------

DomainDataset resample_linear_decay(const DomainDataset& ds, double start_ratio,
                                    double end_ratio, std::uint64_t seed) {
  if (!ds.labeled()) {
    throw std::invalid_argument("resample_linear_decay: dataset is unlabeled");
  }
  if (!(0.0 < end_ratio && end_ratio <= start_ratio && start_ratio <= 1.0)) {
    throw std::invalid_argument(
        "resample_linear_decay: need 0 < end_ratio <= start_ratio <= 1");
  }
  const int k_total = ds.label_domain_size();
  const double denom = k_total > 1 ? k_total - 1.0 : 1.0;
  Rng rng(seed);
  std::vector<int> kept;
  for (int k = 0; k < k_total; ++k) {
    std::vector<int> idx = indices_of_class(ds, k);
    const double ratio = start_ratio + (end_ratio - start_ratio) * k / denom;
    const int keep =
        static_cast<int>(std::floor(static_cast<double>(idx.size()) * ratio));
    rng.shuffle(idx);
    idx.resize(keep);
    kept.insert(kept.end(), idx.begin(), idx.end());
  }
  std::sort(kept.begin(), kept.end());
  return take_rows(ds, kept, ds.name() + "_decay");
}

DomainDataset subset_partial(const DomainDataset& ds,
                             const std::set<int>& keep_classes) {
  if (keep_classes.empty()) {
    throw std::invalid_argument("subset_partial: keep_classes is empty");
  }
  for (int k : keep_classes) {
    if (k < 0 || k >= ds.label_domain_size()) {
      throw std::invalid_argument("subset_partial: class " + std::to_string(k) +
                                  " outside label domain");
    }
  }
  std::vector<int> kept;
  for (int i = 0; i < ds.size(); ++i) {
    if (keep_classes.count(ds.labels()[i])) kept.push_back(i);
  }
  return take_rows(ds, kept, ds.name() + "_partial");
}

DomainDataset balance_source(const DomainDataset& ds, std::uint64_t seed) {
  if (!ds.labeled()) {
    throw std::invalid_argument("balance_source: dataset is unlabeled");
  }
  const std::vector<int> counts = ds.class_counts();
  const int target_count = *std::max_element(counts.begin(), counts.end());
  Rng rng(seed);
  std::vector<int> rows(ds.size());
  std::iota(rows.begin(), rows.end(), 0);
  for (int k = 0; k < ds.label_domain_size(); ++k) {
    if (counts[k] == 0) continue;  // nothing to draw from
    const std::vector<int> pool = indices_of_class(ds, k);
    for (int extra = counts[k]; extra < target_count; ++extra) {
      rows.push_back(pool[rng.uniform_int(pool.size())]);
    }
  }
  return take_rows(ds, rows, ds.name() + "_balanced");
}

DomainDataset subsample(const DomainDataset& ds, int n, std::uint64_t seed) {
  if (n <= 0 || n >= ds.size()) return ds;
  std::vector<int> rows(ds.size());
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(seed);
  rng.shuffle(rows);
  rows.resize(n);
  std::sort(rows.begin(), rows.end());
  if (ds.labeled()) return take_rows(ds, rows, ds.name() + "_sub");
  Mat out(n, ds.instances().cols());
  for (int i = 0; i < n; ++i) out.row(i) = ds.instances().row(rows[i]);
  return DomainDataset(std::move(out), ds.shape(), std::nullopt,
                       ds.label_domain_size(), ds.name() + "_sub");
}

// ---- batches -------------------------------------------------------------------

Minibatch sample_minibatch(const DomainDataset& target,
                           const DomainDataset& source, int batch_size,
                           double mix_ratio, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (mix_ratio < 0.0 || mix_ratio > 1.0) {
    throw std::invalid_argument("mix_ratio must be in [0, 1]");
  }
  // round half up so small batches in partial mode still see source rows
  const int n_source = static_cast<int>(std::floor(batch_size * mix_ratio + 0.5));
  const int n_target = batch_size - n_source;
  if (n_source > 0 && source.size() == 0) {
    throw std::invalid_argument("sample_minibatch: source pool is empty");
  }
  if (n_target > 0 && target.size() == 0) {
    throw std::invalid_argument("sample_minibatch: target pool is empty");
  }
  if (n_source > 0 && n_target > 0 &&
      source.shape().dim != target.shape().dim) {
    throw std::invalid_argument("sample_minibatch: pools disagree on shape");
  }

  const int dim = n_target > 0 ? target.shape().dim : source.shape().dim;
  Mat inputs(batch_size, dim);
  std::vector<bool> origin(batch_size, false);
  for (int i = 0; i < n_source; ++i) {
    inputs.row(i) = source.instances().row(
        static_cast<int>(rng.uniform_int(source.size())));
    origin[i] = true;
  }
  for (int i = 0; i < n_target; ++i) {
    inputs.row(n_source + i) = target.instances().row(
        static_cast<int>(rng.uniform_int(target.size())));
  }

  std::vector<int> perm(batch_size);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Minibatch batch;
  batch.inputs.resize(batch_size, dim);
  std::vector<bool> mask(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    batch.inputs.row(i) = inputs.row(perm[i]);
    mask[i] = origin[perm[i]];
  }
  batch.origin_mask = std::move(mask);
  return batch;
}

}  // namespace ruda
