#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "ruda/data.hpp"
#include "ruda/errors.hpp"
#include "testutil.hpp"

using namespace ruda;

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_pair(const std::filesystem::path& images,
                    const std::filesystem::path& labels,
                    const std::vector<std::vector<unsigned char>>& pixel_rows,
                    const std::vector<unsigned char>& label_bytes, int rows,
                    int cols, std::uint32_t image_magic = 0x00000803,
                    std::uint32_t label_magic = 0x00000801,
                    int label_count_override = -1) {
  std::ofstream img(images, std::ios::binary);
  write_be32(img, image_magic);
  write_be32(img, static_cast<std::uint32_t>(pixel_rows.size()));
  write_be32(img, rows);
  write_be32(img, cols);
  for (const auto& row : pixel_rows) {
    img.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  std::ofstream lab(labels, std::ios::binary);
  write_be32(lab, label_magic);
  write_be32(lab, label_count_override >= 0
                      ? static_cast<std::uint32_t>(label_count_override)
                      : static_cast<std::uint32_t>(label_bytes.size()));
  lab.write(reinterpret_cast<const char*>(label_bytes.data()),
            label_bytes.size());
}

DomainDataset tiny_labeled(const std::vector<int>& labels, int k) {
  Mat x(static_cast<int>(labels.size()), 2);
  for (int i = 0; i < x.rows(); ++i) {
    x(i, 0) = i;
    x(i, 1) = labels[i];
  }
  return DomainDataset(x, InstanceShape::flat(2), labels, k, "tiny");
}

// n_per_class instances per class, labels 0..k-1
DomainDataset balanced_dataset(int k, int n_per_class) {
  std::vector<int> labels;
  for (int c = 0; c < k; ++c) {
    labels.insert(labels.end(), n_per_class, c);
  }
  return tiny_labeled(labels, k);
}

}  // namespace

TEST_CASE("idx round trip and scaling") {
  const auto dir = testutil::scratch_dir("idx");
  // 3 images, 2x2, labels spanning 0..9 so the derived label domain is 10
  std::vector<std::vector<unsigned char>> pixels = {
      {0, 128, 255, 64}, {1, 2, 3, 4}, {250, 251, 252, 253}};
  write_idx_pair(dir / "img", dir / "lab", pixels, {0, 9, 5}, 2, 2);

  const DomainDataset ds = load_idx(dir / "img", dir / "lab");
  CHECK(ds.size() == 3);
  CHECK(ds.label_domain_size() == 10);
  CHECK(ds.shape().is_image());
  CHECK(ds.shape().dim == 4);
  CHECK(ds.instances()(0, 1) == doctest::Approx(128.0 / 255.0));
  CHECK(ds.instances()(0, 2) == doctest::Approx(1.0));
  CHECK(ds.labels()[1] == 9);

  save_idx(ds, dir / "img2", dir / "lab2");
  const DomainDataset ds2 = load_idx(dir / "img2", dir / "lab2");
  CHECK(ds2.size() == 3);
  CHECK((ds2.instances() - ds.instances()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ds2.labels() == ds.labels());
}

TEST_CASE("idx error paths") {
  const auto dir = testutil::scratch_dir("idx_err");

  // zero items: fine, empty dataset
  write_idx_pair(dir / "img0", dir / "lab0", {}, {}, 2, 2);
  const DomainDataset empty = load_idx(dir / "img0", dir / "lab0");
  CHECK(empty.size() == 0);

  // label count differs from image count
  write_idx_pair(dir / "img1", dir / "lab1", {{1, 2, 3, 4}}, {1, 2}, 2, 2, //
                 0x00000803, 0x00000801, 2);
  CHECK_THROWS_WITH_AS(load_idx(dir / "img1", dir / "lab1"),
                       doctest::Contains("count mismatch"), IoError);

  // malformed magic
  write_idx_pair(dir / "img2", dir / "lab2", {{1, 2, 3, 4}}, {1}, 2, 2,
                 0xdeadbeef);
  CHECK_THROWS_WITH_AS(load_idx(dir / "img2", dir / "lab2"),
                       doctest::Contains("magic"), IoError);

  // truncated pixel payload
  {
    std::ofstream img(dir / "img3", std::ios::binary);
    write_be32(img, 0x00000803);
    write_be32(img, 2);
    write_be32(img, 2);
    write_be32(img, 2);
    const unsigned char partial[3] = {1, 2, 3};
    img.write(reinterpret_cast<const char*>(partial), 3);
  }
  write_idx_pair(dir / "imgx", dir / "lab3", {}, {7, 7}, 2, 2, 0x00000803,
                 0x00000801, 2);
  CHECK_THROWS_AS(load_idx(dir / "img3", dir / "lab3"), IoError);

  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lab0"), IoError);
}

TEST_CASE("rudx container round trip") {
  const auto dir = testutil::scratch_dir("rudx");
  Rng rng(5);
  Mat x = testutil::random_inputs(7, 3, rng);
  // float32 storage: quantize the expectation accordingly
  const DomainDataset ds(x, InstanceShape::flat(3),
                         std::vector<int>{0, 1, 2, 0, 1, 2, 0}, 3, "synth");
  save_rudx(ds, dir / "pair.rudx");
  const DomainDataset back = load_rudx(dir / "pair.rudx");
  CHECK(back.size() == 7);
  CHECK(back.label_domain_size() == 3);
  CHECK(back.labels() == ds.labels());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      CHECK(back.instances()(i, j) ==
            doctest::Approx(static_cast<float>(x(i, j))).epsilon(1e-12));
    }
  }
}

TEST_CASE("synthetic pair: identity transform and determinism") {
  const Vec zero_shift = Vec::Zero(2);
  auto [src, tgt] = make_synthetic_pair(5, 100, 2, zero_shift, 0.0, 0.1, 42);
  CHECK(src.size() == 500);
  CHECK(tgt.size() == 500);
  CHECK(src.label_domain_size() == 5);
  CHECK(src.labels() == tgt.labels());

  // identity transform: per-class empirical means agree within noise
  for (int k = 0; k < 5; ++k) {
    Vec mean_s = Vec::Zero(2), mean_t = Vec::Zero(2);
    int n = 0;
    for (int i = 0; i < src.size(); ++i) {
      if (src.labels()[i] != k) continue;
      mean_s += src.instances().row(i).transpose();
      mean_t += tgt.instances().row(i).transpose();
      ++n;
    }
    CHECK(((mean_s - mean_t) / n).norm() < 0.1);
  }

  auto [src2, tgt2] = make_synthetic_pair(5, 100, 2, zero_shift, 0.0, 0.1, 42);
  CHECK(src.instances() == src2.instances());
  CHECK(tgt.instances() == tgt2.instances());

  auto [src3, tgt3] = make_synthetic_pair(5, 100, 2, zero_shift, 0.0, 0.1, 43);
  CHECK(src.instances() != src3.instances());
}

TEST_CASE("synthetic pair: rigid transform oracle on noiseless means") {
  // zero noise exposes the class means directly; the oracle recomputes the
  // rotation+shift on the known circle means
  Vec shift(2);
  shift << 3.0, 0.0;
  const double angle = 0.4;
  const double radius = 8.0;
  auto [src, tgt] =
      make_synthetic_pair(5, 3, 2, shift, angle, /*noise_sd=*/0.0, 7, radius);
  const Mat means = synthetic_class_means(5, 2, radius);
  for (int i = 0; i < src.size(); ++i) {
    const int k = src.labels()[i];
    CHECK((src.instances().row(i).transpose() - means.row(k).transpose())
              .norm() < 1e-12);
    Vec expected(2);
    expected(0) = std::cos(angle) * means(k, 0) - std::sin(angle) * means(k, 1) +
                  shift(0);
    expected(1) = std::sin(angle) * means(k, 0) + std::cos(angle) * means(k, 1) +
                  shift(1);
    CHECK((tgt.instances().row(i).transpose() - expected).norm() < 1e-12);
  }
}

TEST_CASE("synthetic pair rejects bad arguments") {
  const Vec shift = Vec::Zero(2);
  CHECK_THROWS_AS(make_synthetic_pair(1, 10, 2, shift, 0, 0.1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic_pair(3, 0, 2, shift, 0, 0.1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic_pair(3, 10, 1, Vec::Zero(1), 0, 0.1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic_pair(3, 10, 2, Vec::Zero(3), 0, 0.1, 1),
                  std::invalid_argument);
}

TEST_CASE("linear decay resampling counts follow the floor rule") {
  const DomainDataset ds = balanced_dataset(10, 100);
  const DomainDataset out = resample_linear_decay(ds, 1.0, 0.3, 11);

  // oracle: r_k = 1 - 0.7k/9, keep floor(100 r_k)
  std::vector<int> expected;
  for (int k = 0; k < 10; ++k) {
    const double r = 1.0 + (0.3 - 1.0) * k / 9.0;
    expected.push_back(static_cast<int>(std::floor(100.0 * r)));
  }
  CHECK(expected == std::vector<int>{100, 92, 84, 76, 68, 61, 53, 45, 37, 30});
  CHECK(out.class_counts() == expected);

  // protocol anchor: 10 instances of class 0 leave 3 of the last class
  const DomainDataset small = balanced_dataset(10, 10);
  const DomainDataset small_out = resample_linear_decay(small, 1.0, 0.3, 11);
  CHECK(small_out.class_counts()[0] == 10);
  CHECK(small_out.class_counts()[9] == 3);
}

TEST_CASE("linear decay resampling properties") {
  const DomainDataset ds = balanced_dataset(4, 50);

  // identity ratios keep the dataset unchanged up to order
  const DomainDataset same = resample_linear_decay(ds, 1.0, 1.0, 3);
  CHECK(same.size() == ds.size());
  CHECK(same.class_counts() == ds.class_counts());

  // subset relation: every output instance appears in the input with its label
  const DomainDataset out = resample_linear_decay(ds, 1.0, 0.4, 3);
  for (int i = 0; i < out.size(); ++i) {
    bool found = false;
    for (int j = 0; j < ds.size() && !found; ++j) {
      found = ds.labels()[j] == out.labels()[i] &&
              (ds.instances().row(j) - out.instances().row(i)).norm() == 0.0;
    }
    CHECK(found);
  }

  // determinism
  const DomainDataset out2 = resample_linear_decay(ds, 1.0, 0.4, 3);
  CHECK(out.instances() == out2.instances());

  Mat x(3, 1);
  x << 1, 2, 3;
  const DomainDataset unlabeled(x, InstanceShape::flat(1), std::nullopt, 2, "u");
  CHECK_THROWS_AS(resample_linear_decay(unlabeled, 1.0, 0.5, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(resample_linear_decay(ds, 0.5, 1.0, 1), std::invalid_argument);
}

TEST_CASE("partial subsetting") {
  const DomainDataset ds = balanced_dataset(10, 100);

  std::set<int> all;
  for (int k = 0; k < 10; ++k) all.insert(k);
  const DomainDataset full = subset_partial(ds, all);
  CHECK(full.size() == ds.size());
  CHECK(full.label_domain_size() == 10);

  const DomainDataset first6 = subset_partial(ds, {0, 1, 2, 3, 4, 5});
  CHECK(first6.size() == 600);
  CHECK(first6.label_domain_size() == 10);  // labels stay in the source domain
  const auto counts = first6.class_counts();
  for (int k = 6; k < 10; ++k) CHECK(counts[k] == 0);
  for (int k = 0; k < 6; ++k) CHECK(counts[k] == 100);

  const DomainDataset only3 = subset_partial(ds, {3});
  CHECK(only3.size() == 100);
  for (int y : only3.labels()) CHECK(y == 3);

  CHECK_THROWS_AS(subset_partial(ds, {}), std::invalid_argument);
  CHECK_THROWS_AS(subset_partial(ds, {42}), std::invalid_argument);
}

TEST_CASE("source balancing") {
  const DomainDataset uniform = balanced_dataset(3, 20);
  const DomainDataset still = balance_source(uniform, 9);
  CHECK(still.class_counts() == uniform.class_counts());

  // counts (10, 5) -> (10, 10) with extras drawn from class 1's pool
  std::vector<int> labels(10, 0);
  labels.insert(labels.end(), 5, 1);
  const DomainDataset skew = tiny_labeled(labels, 2);
  const DomainDataset balanced = balance_source(skew, 9);
  CHECK(balanced.class_counts() == std::vector<int>{10, 10});
  for (int i = 0; i < balanced.size(); ++i) {
    if (balanced.labels()[i] == 1) {
      CHECK(balanced.instances()(i, 1) == 1.0);  // came from class 1 rows
    }
  }

  // zero variance of class counts afterwards
  Rng rng(123);
  std::vector<int> random_labels;
  for (int i = 0; i < 60; ++i) random_labels.push_back(int(rng.uniform_int(4)));
  const DomainDataset messy = tiny_labeled(random_labels, 4);
  const auto counts = balance_source(messy, 5).class_counts();
  for (int c : counts) CHECK(c == counts[0]);
}

TEST_CASE("minibatch composition") {
  const DomainDataset target = balanced_dataset(3, 40);
  const DomainDataset source = balanced_dataset(3, 40);

  Rng rng(77);
  const Minibatch half = sample_minibatch(target, source, 64, 0.5, rng);
  REQUIRE(half.origin_mask.has_value());
  int from_source = 0;
  for (bool b : *half.origin_mask) from_source += b;
  CHECK(from_source == 32);
  CHECK(half.inputs.rows() == 64);
  CHECK_FALSE(half.labels.has_value());  // labels are discarded

  const Minibatch pure = sample_minibatch(target, source, 16, 0.0, rng);
  for (bool b : *pure.origin_mask) CHECK_FALSE(b);

  const Minibatch m10 = sample_minibatch(target, source, 10, 0.3, rng);
  int src10 = 0;
  for (bool b : *m10.origin_mask) src10 += b;
  CHECK(src10 == 3);  // round(10*0.3) = 3, round half up
}

TEST_CASE("minibatch composition exact for a grid of sizes and ratios") {
  const DomainDataset target = balanced_dataset(2, 30);
  const DomainDataset source = balanced_dataset(2, 30);
  Rng rng(31);
  for (int m = 1; m <= 256; ++m) {
    for (double ratio : {0.0, 0.25, 0.5, 1.0}) {
      const Minibatch batch = sample_minibatch(target, source, m, ratio, rng);
      const int expected = static_cast<int>(std::floor(m * ratio + 0.5));
      int got = 0;
      for (bool b : *batch.origin_mask) got += b;
      CHECK(got == expected);
      CHECK(batch.inputs.rows() == m);
    }
  }
}

TEST_CASE("minibatch determinism and error paths") {
  const DomainDataset target = balanced_dataset(2, 10);
  const DomainDataset source = balanced_dataset(2, 10);

  Rng rng_a(5), rng_b(5);
  const Minibatch a = sample_minibatch(target, source, 8, 0.5, rng_a);
  const Minibatch b = sample_minibatch(target, source, 8, 0.5, rng_b);
  CHECK(a.inputs == b.inputs);
  CHECK(*a.origin_mask == *b.origin_mask);

  const DomainDataset empty(Mat(0, 2), InstanceShape::flat(2),
                            std::vector<int>{}, 2, "empty");
  Rng rng(1);
  CHECK_THROWS_AS(sample_minibatch(empty, source, 4, 0.0, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_minibatch(target, empty, 4, 0.5, rng),
                  std::invalid_argument);
  // empty pool is fine while its share is zero
  CHECK_NOTHROW(sample_minibatch(target, empty, 4, 0.0, rng));
}

TEST_CASE("dataset invariants") {
  CHECK_THROWS_AS(DomainDataset(Mat(2, 2), InstanceShape::flat(2),
                                std::vector<int>{0}, 2, "bad"),
                  std::invalid_argument);
  CHECK_THROWS_AS(DomainDataset(Mat(2, 2), InstanceShape::flat(2),
                                std::vector<int>{0, 5}, 2, "bad"),
                  std::invalid_argument);
  CHECK_THROWS_AS(DomainDataset(Mat(2, 3), InstanceShape::flat(2),
                                std::vector<int>{0, 1}, 2, "bad"),
                  std::invalid_argument);
}
