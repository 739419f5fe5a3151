#include "ruda/eval.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "ruda/errors.hpp"
#include "ruda/losses.hpp"

namespace ruda {

namespace {

// encode in chunks so digit-scale datasets do not blow up transient memory
Mat encode_all(ModelBundle& bundle, WhichEncoder which, const Mat& instances) {
  constexpr int kChunk = 512;
  const int n = static_cast<int>(instances.rows());
  Mat features;
  for (int start = 0; start < n; start += kChunk) {
    const int len = std::min(kChunk, n - start);
    const Mat part = encode(bundle, which, instances.middleRows(start, len));
    if (features.size() == 0) features.resize(n, part.cols());
    features.middleRows(start, len) = part;
  }
  if (n == 0) features.resize(0, 0);
  return features;
}

}  // namespace

int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

std::vector<int> predict(ModelBundle& bundle, const DomainDataset& ds,
                         WhichEncoder which) {
  const Mat features = encode_all(bundle, which, ds.instances());
  const Mat probs = classify(bundle, features);
  std::vector<int> preds(probs.rows());
  for (int i = 0; i < probs.rows(); ++i) preds[i] = argmax_row(probs.row(i));
  return preds;
}

MetricsReport metrics_from_predictions(const std::vector<int>& predictions,
                                       const std::vector<int>& labels,
                                       int num_classes, std::uint64_t iter) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("metrics_from_predictions: length mismatch");
  }
  MetricsReport report;
  report.iter = iter;
  report.confusion = IntMat::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    report.confusion(labels[i], predictions[i])++;
  }
  const long total = report.confusion.sum();
  report.overall_acc =
      total > 0 ? double(report.confusion.trace()) / double(total) : 0.0;
  report.per_class_acc.resize(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const long row_sum = report.confusion.row(k).sum();
    if (row_sum > 0) {
      report.per_class_acc[k] = double(report.confusion(k, k)) / double(row_sum);
    }
  }
  return report;
}

MetricsReport evaluate(ModelBundle& bundle, const DomainDataset& target,
                       const Centroids* centroids, std::uint64_t iter,
                       double alpha) {
  if (!target.labeled()) {
    throw std::invalid_argument("evaluate: target dataset is unlabeled");
  }
  const Mat features = encode_all(bundle, WhichEncoder::target,
                                  target.instances());
  const Mat probs = classify(bundle, features);
  std::vector<int> preds(probs.rows());
  for (int i = 0; i < probs.rows(); ++i) preds[i] = argmax_row(probs.row(i));

  MetricsReport report = metrics_from_predictions(
      preds, target.labels(), target.label_domain_size(), iter);

  if (centroids && centroids->z.rows() >= 2) {
    const losses::SoftAssignment q =
        losses::soft_assign(features, centroids->z, alpha);
    std::vector<int> assignments(q.q.rows());
    for (int i = 0; i < q.q.rows(); ++i) {
      assignments[i] = argmax_row(q.q.row(i));
    }
    report.cluster_acc = cluster_accuracy(assignments, target.labels());
  }
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["iter"] = iter;
  j["overall_acc"] = overall_acc;
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& a : per_class_acc) {
    if (a) {
      per_class.push_back(*a);
    } else {
      per_class.push_back(nullptr);
    }
  }
  j["per_class_acc"] = per_class;
  if (cluster_acc) {
    j["cluster_acc"] = *cluster_acc;
  } else {
    j["cluster_acc"] = nullptr;
  }
  nlohmann::json conf = nlohmann::json::array();
  for (int r = 0; r < confusion.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < confusion.cols(); ++c) row.push_back(confusion(r, c));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  return j.dump();
}

// ---- Hungarian ---------------------------------------------------------------

std::vector<int> hungarian_min_assignment(const Mat& cost) {
  if (cost.rows() != cost.cols()) {
    throw std::invalid_argument("hungarian_min_assignment: matrix not square");
  }
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

double cluster_accuracy(const std::vector<int>& assignments,
                        const std::vector<int>& labels) {
  if (assignments.size() != labels.size()) {
    throw std::invalid_argument("cluster_accuracy: length mismatch");
  }
  if (assignments.empty()) return 0.0;
  int k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (assignments[i] < 0 || labels[i] < 0) {
      throw std::invalid_argument("cluster_accuracy: negative entries");
    }
    k = std::max({k, assignments[i] + 1, labels[i] + 1});
  }
  Mat contingency = Mat::Zero(k, k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    contingency(assignments[i], labels[i]) += 1.0;
  }
  const std::vector<int> match = hungarian_min_assignment(-contingency);
  double correct = 0.0;
  for (int c = 0; c < k; ++c) correct += contingency(c, match[c]);
  return correct / static_cast<double>(labels.size());
}

// ---- embedding export ------------------------------------------------------------

void export_embeddings(ModelBundle& bundle,
                       std::span<const EmbeddingExportItem> items,
                       const Centroids* centroids,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const int f = bundle.encoder_spec.feature_dim;
  out << "domain,label";
  for (int j = 0; j < f; ++j) out << ",f" << j;
  out << "\n";
  out.precision(9);

  for (const auto& item : items) {
    const Mat features =
        encode_all(bundle, item.domain, item.dataset->instances());
    const char* tag = item.domain == WhichEncoder::source ? "source" : "target";
    for (int i = 0; i < features.rows(); ++i) {
      const int label = item.dataset->labeled() ? item.dataset->labels()[i] : -1;
      out << tag << ',' << label;
      for (int j = 0; j < f; ++j) out << ',' << features(i, j);
      out << "\n";
    }
  }
  if (centroids) {
    for (int c = 0; c < centroids->z.rows(); ++c) {
      out << "centroid," << c;
      for (int j = 0; j < f; ++j) out << ',' << centroids->z(c, j);
      out << "\n";
    }
  }
  if (!out) throw IoError("short write while exporting embeddings");
}

}  // namespace ruda
