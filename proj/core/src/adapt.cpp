#include "ruda/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "ruda/errors.hpp"
#include "ruda/losses.hpp"

namespace ruda {

namespace {

void check_finite(double value, const nn::Net& net, const char* loss_name,
                  std::uint64_t iter) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite value in ") + loss_name +
                       " at iteration " + std::to_string(iter));
  }
  if (!net.gradients().allFinite()) {
    throw NumericError(std::string("non-finite gradient in ") + loss_name +
                       " at iteration " + std::to_string(iter));
  }
}

void check_finite_mat(double value, const Mat& grad, const char* loss_name,
                      std::uint64_t iter) {
  if (!std::isfinite(value) || !grad.allFinite()) {
    throw NumericError(std::string("non-finite value or gradient in ") +
                       loss_name + " at iteration " + std::to_string(iter));
  }
}

Minibatch sample_source_batch(const DomainDataset& source, int batch_size,
                              Rng& rng) {
  Minibatch batch;
  batch.inputs.resize(batch_size, source.shape().dim);
  for (int i = 0; i < batch_size; ++i) {
    batch.inputs.row(i) = source.instances().row(
        static_cast<int>(rng.uniform_int(source.size())));
  }
  return batch;
}

Mat encode_chunked(ModelBundle& bundle, WhichEncoder which, const Mat& rows) {
  constexpr int kChunk = 512;
  const int n = static_cast<int>(rows.rows());
  Mat features;
  for (int start = 0; start < n; start += kChunk) {
    const int len = std::min(kChunk, n - start);
    const Mat part = encode(bundle, which, rows.middleRows(start, len));
    if (features.size() == 0) features.resize(n, part.cols());
    features.middleRows(start, len) = part;
  }
  return features;
}

}  // namespace

void AdaptationConfig::validate() const {
  if (gamma_adv <= 0.0) throw std::invalid_argument("gamma_adv must be > 0");
  if (gamma_enc <= 0.0) throw std::invalid_argument("gamma_enc must be > 0");
  if (gamma_dec <= 0.0) throw std::invalid_argument("gamma_dec must be > 0");
  if (resolved_gamma_dis() <= 0.0) {
    throw std::invalid_argument("gamma_dis must be > 0");
  }
  if (warmup_iters < 0) throw std::invalid_argument("warmup_iters must be >= 0");
  if (warmup_iters >= max_iters) {
    throw std::invalid_argument("warmup_iters must be < max_iters");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
  if (mix_ratio < 0.0 || mix_ratio > 1.0) {
    throw std::invalid_argument("mix_ratio must be in [0, 1]");
  }
  if (mode != AdaptMode::partial && mix_ratio != 0.0) {
    throw std::invalid_argument("mix_ratio must be 0 unless mode is partial");
  }
  if (alpha <= 0.0) throw std::invalid_argument("alpha must be > 0");
  if (eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
}

// ---- pretraining -----------------------------------------------------------------

ModelBundle pretrain_source(ModelBundle bundle, const DomainDataset& source,
                            int epochs, double lr, std::uint64_t seed,
                            int batch_size, OptimizerKind optimizer) {
  if (!source.labeled()) {
    throw std::invalid_argument("pretrain_source: source must be labeled");
  }
  Rng rng(seed);
  nn::AdamState adam_encoder, adam_classifier;
  std::vector<int> order(source.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < source.size(); start += batch_size) {
      const int len = std::min(batch_size, source.size() - start);
      Mat inputs(len, source.shape().dim);
      std::vector<int> labels(len);
      for (int i = 0; i < len; ++i) {
        inputs.row(i) = source.instances().row(order[start + i]);
        labels[i] = source.labels()[order[start + i]];
      }
      const double value =
          losses::classification_objective(bundle, inputs, labels);
      if (!std::isfinite(value)) {
        throw NumericError("pretraining diverged: non-finite L_cla at epoch " +
                           std::to_string(epoch));
      }
      if (optimizer == OptimizerKind::adam) {
        nn::adam_step(bundle.source_encoder, adam_encoder, lr, +1.0);
        nn::adam_step(bundle.classifier, adam_classifier, lr, +1.0);
      } else {
        nn::sgd_step(bundle.source_encoder, lr, +1.0);
        nn::sgd_step(bundle.classifier, lr, +1.0);
      }
    }
  }
  bundle.source_encoder_frozen = true;
  bundle.classifier_frozen = true;
  bundle.target_encoder = bundle.source_encoder;  // re-sync warm start
  return bundle;
}

// ---- centroid initialization --------------------------------------------------------

Centroids init_centroids(ModelBundle& bundle, const DomainDataset& target,
                         const DomainDataset& source, AdaptMode mode) {
  const int k = bundle.classifier_spec.num_classes;
  const int f = bundle.encoder_spec.feature_dim;
  Centroids centroids(k, f);

  // source class means (E_s features) double as the fallback for empty classes
  const Mat source_features =
      encode_chunked(bundle, WhichEncoder::source, source.instances());
  Mat source_means = Mat::Zero(k, f);
  std::vector<int> source_counts(k, 0);
  for (int i = 0; i < source.size(); ++i) {
    const int y = source.labels()[i];
    source_means.row(y) += source_features.row(i);
    source_counts[y]++;
  }
  const Vec global_mean = source_features.colwise().mean().transpose();
  for (int c = 0; c < k; ++c) {
    if (source_counts[c] > 0) {
      source_means.row(c) /= source_counts[c];
    } else {
      Rng jitter(0xC3D0 + static_cast<std::uint64_t>(c));
      for (int j = 0; j < f; ++j) {
        source_means(c, j) = global_mean(j) + 1e-2 * jitter.normal();
      }
    }
  }

  if (mode == AdaptMode::partial) {
    centroids.z = source_means;
    return centroids;
  }

  const Mat target_features =
      encode_chunked(bundle, WhichEncoder::target, target.instances());
  const Mat probs = classify(bundle, target_features);
  Mat sums = Mat::Zero(k, f);
  std::vector<int> counts(k, 0);
  for (int i = 0; i < probs.rows(); ++i) {
    const int c = argmax_row(probs.row(i));
    sums.row(c) += target_features.row(i);
    counts[c]++;
  }
  for (int c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      centroids.z.row(c) = sums.row(c) / counts[c];
    } else {
      centroids.z.row(c) = source_means.row(c);
    }
  }
  return centroids;
}

// ---- one training step ------------------------------------------------------------------

StepLosses adaptation_step(TrainState& state, const Minibatch& target_batch,
                           const Minibatch& source_batch,
                           const AdaptationConfig& cfg, StepTrace* trace) {
  ModelBundle& b = state.bundle;
  StepLosses out;
  const auto touch = [&](const char* name) {
    if (trace) trace->touches.emplace_back(name);
  };

  const bool clustering_on =
      state.iter > static_cast<std::uint64_t>(cfg.warmup_iters) &&
      (cfg.ablation == Ablation::full || cfg.ablation == Ablation::no_dis);

  if (clustering_on) {
    const double dec = losses::clustering_objective(b, state.centroids,
                                                    target_batch.inputs,
                                                    cfg.alpha);
    check_finite(dec, b.target_encoder, "L_dec", state.iter);
    check_finite_mat(dec, state.centroids.grad, "L_dec", state.iter);
    out.dec = dec;
    if (!b.target_encoder_frozen) {
      nn::sgd_step(b.target_encoder, cfg.gamma_dec, -1.0);
      touch("dec:theta_Et");
    }
    state.centroids.z -= cfg.gamma_dec * state.centroids.grad;
    touch("dec:Z_c");

    if (cfg.ablation == Ablation::full) {
      // evaluated at the already-updated centroids, as in the sequenced
      // update lines of the training procedure
      const double dis = losses::dissimilarity_objective(b, state.centroids);
      check_finite_mat(dis, state.centroids.grad, "L_dis", state.iter);
      out.dis = dis;
      state.centroids.z -= cfg.resolved_gamma_dis() * state.centroids.grad;
      touch("dis:Z_c");
    }
  }

  out.adv =
      losses::adversarial_objective(b, source_batch.inputs, target_batch.inputs);
  check_finite(out.adv, b.discriminator, "L_adv", state.iter);
  if (!b.discriminator_frozen) {
    if (cfg.optimizer == OptimizerKind::adam) {
      nn::adam_step(b.discriminator, state.adam_discriminator, cfg.gamma_adv,
                    +1.0);
    } else {
      nn::sgd_step(b.discriminator, cfg.gamma_adv, +1.0);
    }
    touch("adv:theta_D");
  }

  out.enc = losses::encoder_objective(b, target_batch.inputs);
  check_finite(out.enc, b.target_encoder, "L_enc", state.iter);
  if (!b.target_encoder_frozen) {
    if (cfg.optimizer == OptimizerKind::adam) {
      nn::adam_step(b.target_encoder, state.adam_encoder, cfg.gamma_enc, +1.0);
    } else {
      nn::sgd_step(b.target_encoder, cfg.gamma_enc, +1.0);
    }
    touch("enc:theta_Et");
  }

  state.iter += 1;
  return out;
}

// ---- full run ---------------------------------------------------------------------------

RunResult run_adaptation(const ModelBundle& pretrained,
                         const DomainDataset& target,
                         const DomainDataset& source,
                         const AdaptationConfig& cfg, const RunSinks& sinks) {
  cfg.validate();
  if (cfg.mode == AdaptMode::partial && cfg.mix_ratio == 0.0) {
    throw std::invalid_argument(
        "partial mode requires a nonzero mix_ratio (target augmentation)");
  }
  if (target.size() == 0) {
    throw std::invalid_argument("run_adaptation: empty target dataset");
  }

  RunResult result;
  TrainState& state = result.state;
  state.bundle = pretrained;
  state.rng = Rng(cfg.seed);
  state.centroids = init_centroids(state.bundle, target, source, cfg.mode);

  const double mix = cfg.mode == AdaptMode::partial ? cfg.mix_ratio : 0.0;
  std::vector<int> prev_preds;
  std::deque<double> churn_history;
  const int churn_span = std::max(1, cfg.churn_window / cfg.eval_interval);

  for (int i = 0; i < cfg.max_iters; ++i) {
    const Minibatch target_batch =
        sample_minibatch(target, source, cfg.batch_size, mix, state.rng);
    const Minibatch source_batch =
        sample_source_batch(source, cfg.batch_size, state.rng);
    const StepLosses losses_out =
        adaptation_step(state, target_batch, source_batch, cfg);

    // keep traces finite: evaluate unapplied losses forward-only
    const double dec =
        losses_out.dec ? *losses_out.dec
                       : losses::clustering_value(state.bundle, state.centroids,
                                                  target_batch.inputs, cfg.alpha);
    const double dis = losses_out.dis
                           ? *losses_out.dis
                           : losses::dissimilarity_value(state.bundle,
                                                         state.centroids);
    state.traces.adv.push_back(losses_out.adv);
    state.traces.enc.push_back(losses_out.enc);
    state.traces.dec.push_back(dec);
    state.traces.dis.push_back(dis);
    if (sinks.on_losses) {
      sinks.on_losses(state.iter, losses_out.adv, losses_out.enc, dec, dis);
    }

    const bool last = i + 1 == cfg.max_iters;
    if ((i + 1) % cfg.eval_interval == 0 || last) {
      std::vector<int> preds = predict(state.bundle, target);
      if (target.labeled()) {
        MetricsReport report = evaluate(state.bundle, target, &state.centroids,
                                        state.iter, cfg.alpha);
        result.final_metrics = report;
        if (sinks.on_metrics) sinks.on_metrics(report);
      }
      if (cfg.early_stop) {
        if (!prev_preds.empty()) {
          int changed = 0;
          for (std::size_t j = 0; j < preds.size(); ++j) {
            changed += preds[j] != prev_preds[j];
          }
          churn_history.push_back(double(changed) / double(preds.size()));
          if (static_cast<int>(churn_history.size()) > churn_span) {
            churn_history.pop_front();
          }
          if (static_cast<int>(churn_history.size()) == churn_span) {
            const double avg =
                std::accumulate(churn_history.begin(), churn_history.end(), 0.0) /
                churn_history.size();
            if (avg < cfg.churn_threshold) break;
          }
        }
        prev_preds = std::move(preds);
      }
    }
  }

  if (target.labeled() && !result.final_metrics) {
    result.final_metrics =
        evaluate(state.bundle, target, &state.centroids, state.iter, cfg.alpha);
  }
  return result;
}

// ---- learning-rate sweep -------------------------------------------------------------------

std::vector<SweepCell> lr_sweep(const ModelBundle& pretrained,
                                const DomainDataset& target,
                                const DomainDataset& source,
                                AdaptationConfig base,
                                const std::vector<double>& gamma_dec_grid) {
  if (gamma_dec_grid.empty()) {
    throw std::invalid_argument("lr_sweep: empty grid");
  }
  for (double g : gamma_dec_grid) {
    if (g <= 0.0) throw std::invalid_argument("lr_sweep: grid values must be > 0");
  }
  std::vector<SweepCell> cells;
  for (double g : gamma_dec_grid) {
    SweepCell cell;
    cell.gamma_dec = g;
    AdaptationConfig cfg = base;
    cfg.gamma_dec = g;
    cfg.gamma_dis.reset();  // keep the 2x coupling across the grid
    try {
      const RunResult run = run_adaptation(pretrained, target, source, cfg);
      if (run.final_metrics) cell.overall_acc = run.final_metrics->overall_acc;
      cell.status = "ok";
    } catch (const std::exception& e) {
      cell.status = std::string("error: ") + e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "gamma_dec,overall_acc,status\n";
  out.precision(12);
  for (const auto& cell : cells) {
    out << cell.gamma_dec << ',';
    if (cell.overall_acc) out << *cell.overall_acc;
    out << ',' << cell.status << "\n";
  }
  if (!out) throw IoError("short write while writing " + path.string());
}

}  // namespace ruda
