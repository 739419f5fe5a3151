#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ruda/data.hpp"
#include "ruda/eval.hpp"
#include "ruda/nets.hpp"
#include "ruda/rng.hpp"

namespace ruda {

enum class AdaptMode { balanced, imbalanced, partial };

// full        = adversarial matching + clustering + dissimilarity
// no_dis      = drop the dissimilarity term
// adda_only   = adversarial matching only
// adda_mix    = adversarial matching with mixed batches (partial mode)
enum class Ablation { full, no_dis, adda_only, adda_mix };

enum class OptimizerKind { sgd, adam };

struct AdaptationConfig {
  double gamma_adv = 1e-3;  // discriminator rate
  double gamma_enc = 1e-5;  // target-encoder rate (adversarial update)
  double gamma_dec = 1e-4;  // clustering rate
  std::optional<double> gamma_dis;  // defaults to 2 * gamma_dec

  int warmup_iters = 100;  // adversarial-only iterations before clustering
  int batch_size = 64;
  int max_iters = 2000;
  AdaptMode mode = AdaptMode::balanced;
  double mix_ratio = 0.0;  // source share of the target batch (partial only)
  Ablation ablation = Ablation::full;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;  // adversarial updates only
  double alpha = 1.0;  // Student-t degrees of freedom

  int eval_interval = 100;
  bool early_stop = false;         // stop on a quiet pseudo-label churn window
  double churn_threshold = 1e-3;   // fraction of instances changing prediction
  int churn_window = 200;          // iterations averaged for the churn signal

  double resolved_gamma_dis() const { return gamma_dis.value_or(2.0 * gamma_dec); }
  void validate() const;
  bool operator==(const AdaptationConfig&) const = default;
};

struct LossTraces {
  std::vector<double> adv, enc, dec, dis;
};

struct TrainState {
  ModelBundle bundle;
  Centroids centroids;
  std::uint64_t iter = 0;
  LossTraces traces;
  Rng rng{0};
  nn::AdamState adam_discriminator;
  nn::AdamState adam_encoder;
};

// Records the parameter groups an adaptation step touched, in order.
struct StepTrace {
  std::vector<std::string> touches;
};

struct StepLosses {
  double adv = 0.0, enc = 0.0;
  std::optional<double> dec, dis;  // absent when not applied this iteration
};

// Trains source encoder + classifier by maximizing the classification
// objective over shuffled minibatch epochs, then freezes both and re-syncs
// the target encoder.  Zero epochs is a no-op apart from the flags.
ModelBundle pretrain_source(ModelBundle bundle, const DomainDataset& source,
                            int epochs, double lr, std::uint64_t seed,
                            int batch_size = 64,
                            OptimizerKind optimizer = OptimizerKind::adam);

// Centroid c starts at the mean target feature of instances predicted as c
// (balanced/imbalanced) or at the mean source feature of class c (partial).
// Empty classes fall back to the source class mean, then to a jittered
// global mean.
Centroids init_centroids(ModelBundle& bundle, const DomainDataset& target,
                         const DomainDataset& source, AdaptMode mode);

// One iteration of the training loop, in the fixed update order
// dec:theta_Et -> dec:Z_c -> dis:Z_c -> adv:theta_D -> enc:theta_Et, with the
// clustering updates gated by warmup_iters and the ablation flags.  Throws
// NumericError naming the offending loss on non-finite values.
StepLosses adaptation_step(TrainState& state, const Minibatch& target_batch,
                           const Minibatch& source_batch,
                           const AdaptationConfig& cfg,
                           StepTrace* trace = nullptr);

// Optional output sinks for a full run; all are allowed to be empty.
struct RunSinks {
  std::function<void(std::uint64_t iter, double adv, double enc, double dec,
                     double dis)>
      on_losses;
  std::function<void(const MetricsReport&)> on_metrics;
};

struct RunResult {
  TrainState state;
  std::optional<MetricsReport> final_metrics;  // absent for unlabeled targets
};

// The whole adaptation loop: centroid initialization, per-iteration batch
// sampling and stepping, periodic evaluation, optional churn-based early
// stop.  Deterministic in cfg.seed.
RunResult run_adaptation(const ModelBundle& pretrained,
                         const DomainDataset& target,
                         const DomainDataset& source,
                         const AdaptationConfig& cfg,
                         const RunSinks& sinks = {});

// ---- learning-rate sweep -----------------------------------------------------

struct SweepCell {
  double gamma_dec = 0.0;
  std::optional<double> overall_acc;
  std::string status;  // "ok" or the error message
};

// One full adaptation per grid value with gamma_dis tied to 2*gamma_dec and a
// shared seed.  Failures are recorded per cell, never propagated.
std::vector<SweepCell> lr_sweep(const ModelBundle& pretrained,
                                const DomainDataset& target,
                                const DomainDataset& source,
                                AdaptationConfig base,
                                const std::vector<double>& gamma_dec_grid);

void write_sweep_csv(const std::vector<SweepCell>& cells,
                     const std::filesystem::path& path);

}  // namespace ruda
