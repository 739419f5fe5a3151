#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ruda/data.hpp"
#include "ruda/linalg.hpp"
#include "ruda/nets.hpp"

namespace ruda {

struct MetricsReport {
  double overall_acc = 0.0;
  std::vector<std::optional<double>> per_class_acc;  // absent when no instances
  std::optional<double> cluster_acc;                 // absent without centroids
  IntMat confusion;                                  // rows true, cols predicted
  std::uint64_t iter = 0;

  std::string to_json() const;
};

// argmax with ties broken toward the lower index
int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row);

// Confusion-matrix metrics from hard predictions.
MetricsReport metrics_from_predictions(const std::vector<int>& predictions,
                                       const std::vector<int>& labels,
                                       int num_classes, std::uint64_t iter = 0);

// Hard predictions for every instance: argmax of classify(encode(target)).
std::vector<int> predict(ModelBundle& bundle, const DomainDataset& ds,
                         WhichEncoder which = WhichEncoder::target);

// Full evaluation on a labeled target set.  When centroids are given,
// cluster_acc is the Hungarian-matched accuracy of the soft-assignment
// argmax; alpha is the Student-t degrees of freedom used for assignment.
MetricsReport evaluate(ModelBundle& bundle, const DomainDataset& target,
                       const Centroids* centroids = nullptr,
                       std::uint64_t iter = 0, double alpha = 1.0);

// Best one-to-one cluster-to-class matching accuracy (optimal assignment on
// the contingency table).
double cluster_accuracy(const std::vector<int>& assignments,
                        const std::vector<int>& labels);

// Minimum-cost assignment on a square cost matrix (O(n^3) Hungarian);
// returns, for each row, its assigned column.
std::vector<int> hungarian_min_assignment(const Mat& cost);

// ---- embedding export -------------------------------------------------------

struct EmbeddingExportItem {
  const DomainDataset* dataset;
  WhichEncoder domain;  // selects the encoder and the domain tag
};

// Writes rows (domain_tag, label_or_-1, feature values) as CSV; centroid
// rows are appended with domain tag "centroid".
void export_embeddings(ModelBundle& bundle,
                       std::span<const EmbeddingExportItem> items,
                       const Centroids* centroids,
                       const std::filesystem::path& path);

}  // namespace ruda
