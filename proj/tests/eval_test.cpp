#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ruda/eval.hpp"
#include "testutil.hpp"

using namespace ruda;

namespace {

// brute-force oracle: best accuracy over all K! cluster->class relabelings
double brute_force_cluster_accuracy(const std::vector<int>& assignments,
                                    const std::vector<int>& labels, int k) {
  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i) perm[i] = i;
  double best = 0.0;
  do {
    int correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      correct += perm[assignments[i]] == labels[i];
    }
    best = std::max(best, double(correct) / double(labels.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// identity encoder + fixed classifier so predictions are controllable:
// inputs are 2-d, class = argmax of (x0, x1)
ModelBundle crafted_bundle() {
  EncoderSpec enc;
  enc.kind = EncoderKind::mlp;
  enc.input_shape = InstanceShape::flat(2);
  enc.feature_dim = 2;
  enc.hidden_sizes = {};
  ClassifierSpec cls;
  cls.feature_dim = 2;
  cls.num_classes = 2;
  DiscriminatorSpec disc;
  disc.feature_dim = 2;
  disc.hidden = {4, 4};
  ModelBundle bundle = build_models(enc, cls, disc, 0);
  Vec p_enc(6);  // weight = I, bias = 0
  p_enc << 1, 0, 0, 1, 0, 0;
  bundle.source_encoder.set_parameters(p_enc);
  bundle.target_encoder.set_parameters(p_enc);
  Vec p_cls(6);
  p_cls << 1, 0, 0, 1, 0, 0;
  bundle.classifier.set_parameters(p_cls);
  return bundle;
}

Mat one_hot_inputs(const std::vector<int>& predictions) {
  Mat x = Mat::Zero(static_cast<int>(predictions.size()), 2);
  for (int i = 0; i < x.rows(); ++i) x(i, predictions[i]) = 1.0;
  return x;
}

}  // namespace

TEST_CASE("metrics from predictions: hand-counted case") {
  // labels (0,0,1), predictions (0,1,1) -> overall 2/3, per class (1/2, 1)
  const MetricsReport report =
      metrics_from_predictions({0, 1, 1}, {0, 0, 1}, 2);
  CHECK(report.overall_acc == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  REQUIRE(report.per_class_acc.size() == 2);
  CHECK(*report.per_class_acc[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(*report.per_class_acc[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.confusion(0, 0) == 1);
  CHECK(report.confusion(0, 1) == 1);
  CHECK(report.confusion(1, 1) == 1);

  // overall equals trace / total
  CHECK(report.overall_acc ==
        doctest::Approx(double(report.confusion.trace()) /
                        double(report.confusion.sum())));
}

TEST_CASE("metrics invariants on random predictions") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + int(rng.uniform_int(4));
    const int n = 5 + int(rng.uniform_int(50));
    std::vector<int> labels(n), preds(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = int(rng.uniform_int(k));
      preds[i] = int(rng.uniform_int(k));
    }
    const MetricsReport report = metrics_from_predictions(preds, labels, k);
    double weighted = 0.0;
    for (int c = 0; c < k; ++c) {
      if (!report.per_class_acc[c]) continue;
      CHECK(*report.per_class_acc[c] >= 0.0);
      CHECK(*report.per_class_acc[c] <= 1.0);
      const double freq = double(report.confusion.row(c).sum()) / n;
      weighted += freq * *report.per_class_acc[c];
    }
    // overall is the label-frequency weighted mean of per-class accuracies
    CHECK(report.overall_acc == doctest::Approx(weighted).epsilon(1e-9));
  }
}

TEST_CASE("evaluate end to end with a crafted model") {
  ModelBundle bundle = crafted_bundle();
  const std::vector<int> predictions = {0, 1, 1};
  const std::vector<int> labels = {0, 0, 1};
  const DomainDataset target(one_hot_inputs(predictions),
                             InstanceShape::flat(2), labels, 2, "target");
  const MetricsReport report = evaluate(bundle, target);
  CHECK(report.overall_acc == doctest::Approx(2.0 / 3.0));
  CHECK(*report.per_class_acc[0] == doctest::Approx(0.5));
  CHECK(*report.per_class_acc[1] == doctest::Approx(1.0));
  CHECK_FALSE(report.cluster_acc.has_value());

  // perfect predictions
  const DomainDataset aligned(one_hot_inputs(labels), InstanceShape::flat(2),
                              labels, 2, "aligned");
  const MetricsReport perfect = evaluate(bundle, aligned);
  CHECK(perfect.overall_acc == doctest::Approx(1.0));
  CHECK(*perfect.per_class_acc[0] == doctest::Approx(1.0));
  CHECK(*perfect.per_class_acc[1] == doctest::Approx(1.0));

  // order invariance
  const std::vector<int> shuffled_preds = {1, 1, 0};
  const std::vector<int> shuffled_labels = {0, 1, 0};
  const DomainDataset reordered(one_hot_inputs(shuffled_preds),
                                InstanceShape::flat(2), shuffled_labels, 2,
                                "reordered");
  CHECK(evaluate(bundle, reordered).overall_acc == doctest::Approx(2.0 / 3.0));

  Mat x(1, 2);
  x << 1.0, 0.0;
  const DomainDataset unlabeled(x, InstanceShape::flat(2), std::nullopt, 2, "u");
  CHECK_THROWS_AS(evaluate(bundle, unlabeled), std::invalid_argument);
}

TEST_CASE("evaluate ties break toward the lower class index") {
  ModelBundle bundle = crafted_bundle();
  Mat x(1, 2);
  x << 0.7, 0.7;  // equal logits for both classes
  const DomainDataset target(x, InstanceShape::flat(2), std::vector<int>{1}, 2,
                             "tie");
  const MetricsReport report = evaluate(bundle, target);
  CHECK(report.confusion(1, 0) == 1);  // predicted class 0
}

TEST_CASE("cluster accuracy basics") {
  // a relabeling of the truth is a perfect clustering
  CHECK(cluster_accuracy({1, 1, 0, 2, 2}, {0, 0, 1, 2, 2}) ==
        doctest::Approx(1.0));
  CHECK(cluster_accuracy({0, 1, 1}, {0, 0, 1}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(cluster_accuracy({0, 1}, {0}), std::invalid_argument);
}

TEST_CASE("cluster accuracy equals brute force for K <= 5") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + int(rng.uniform_int(4));  // 2..5
    const int n = 5 + int(rng.uniform_int(40));
    std::vector<int> assignments(n), labels(n);
    for (int i = 0; i < n; ++i) {
      assignments[i] = int(rng.uniform_int(k));
      labels[i] = int(rng.uniform_int(k));
    }
    const double fast = cluster_accuracy(assignments, labels);
    const double brute = brute_force_cluster_accuracy(assignments, labels, k);
    CHECK(fast == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("hungarian solves a known assignment") {
  Mat cost(3, 3);
  cost << 4, 1, 3,
          2, 0, 5,
          3, 2, 2;
  const std::vector<int> assignment = hungarian_min_assignment(cost);
  // optimal cost is 5: (0,1), (1,0), (2,2)
  double total = 0.0;
  for (int i = 0; i < 3; ++i) total += cost(i, assignment[i]);
  CHECK(total == doctest::Approx(5.0));
}

TEST_CASE("embedding export") {
  const auto dir = testutil::scratch_dir("embed");
  ModelBundle bundle = crafted_bundle();

  // empty dataset list -> header-only file
  export_embeddings(bundle, {}, nullptr, dir / "empty.csv");
  {
    std::ifstream in(dir / "empty.csv");
    std::string line;
    CHECK(std::getline(in, line));
    CHECK(line == "domain,label,f0,f1");
    CHECK_FALSE(std::getline(in, line));
  }

  // one target instance -> one target row; centroids appended
  Mat x(1, 2);
  x << 0.25, 0.75;
  const DomainDataset target(x, InstanceShape::flat(2), std::vector<int>{1}, 2,
                             "t");
  Centroids centroids(2, 2);
  centroids.z << 1.0, 2.0, 3.0, 4.0;
  const std::vector<EmbeddingExportItem> items = {
      {&target, WhichEncoder::target}};
  export_embeddings(bundle, items, &centroids, dir / "one.csv");
  {
    std::ifstream in(dir / "one.csv");
    std::string line;
    std::getline(in, line);  // header
    std::getline(in, line);
    CHECK(line == "target,1,0.25,0.75");
    int centroid_rows = 0;
    while (std::getline(in, line)) {
      CHECK(line.rfind("centroid,", 0) == 0);
      ++centroid_rows;
    }
    CHECK(centroid_rows == 2);
  }
}
