#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ruda/adapt.hpp"
#include "ruda/data.hpp"
#include "ruda/errors.hpp"
#include "ruda/eval.hpp"
#include "ruda/losses.hpp"
#include "ruda/manifest.hpp"
#include "ruda/nets.hpp"

namespace fs = std::filesystem;

namespace ruda::cli {

namespace {

// relative dataset paths resolve against RUDA_DATA_DIR when it is set
fs::path resolve_data_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) {
    if (const char* base = std::getenv("RUDA_DATA_DIR")) {
      const fs::path candidate = fs::path(base) / path;
      if (fs::exists(candidate) || !fs::exists(path)) return candidate;
    }
  }
  return path;
}

struct DataPair {
  DomainDataset source;
  DomainDataset target;
};

DataPair load_raw_pair(const ExperimentManifest& m) {
  switch (m.data.kind) {
    case DataSpec::Kind::synthetic: {
      const auto& s = m.data.synthetic;
      Vec shift(s.dim);
      for (int i = 0; i < s.dim; ++i) shift(i) = s.shift[i];
      auto [source, target] =
          make_synthetic_pair(s.num_classes, s.per_class, s.dim, shift,
                              s.rotation, s.noise_sd, m.seed, s.radius);
      return {std::move(source), std::move(target)};
    }
    case DataSpec::Kind::idx:
      return {load_idx(resolve_data_path(m.data.source_images),
                       resolve_data_path(m.data.source_labels)),
              load_idx(resolve_data_path(m.data.target_images),
                       resolve_data_path(m.data.target_labels))};
    case DataSpec::Kind::rudx:
      return {load_rudx(resolve_data_path(m.data.source_rudx)),
              load_rudx(resolve_data_path(m.data.target_rudx))};
  }
  throw std::invalid_argument("unreachable data kind");
}

DataPair build_data(const ExperimentManifest& m) {
  DataPair pair = load_raw_pair(m);
  if (m.data.subsample_source > 0) {
    pair.source = subsample(pair.source, m.data.subsample_source, m.seed + 101);
  }
  if (m.data.subsample_target > 0) {
    pair.target = subsample(pair.target, m.data.subsample_target, m.seed + 202);
  }
  if (!m.data.keep_classes.empty()) {
    pair.target = subset_partial(
        pair.target,
        std::set<int>(m.data.keep_classes.begin(), m.data.keep_classes.end()));
  }
  if (m.data.resample == DataSpec::Resample::linear_decay) {
    pair.target = resample_linear_decay(pair.target, m.data.decay_start,
                                        m.data.decay_end, m.seed + 303);
  }
  if (m.data.balance_source) {
    pair.source = balance_source(pair.source, m.seed + 404);
  }
  return pair;
}

ModelBundle build_models_from_manifest(const ExperimentManifest& m,
                                       const DomainDataset& source) {
  EncoderSpec enc;
  enc.kind = m.model.encoder;
  enc.input_shape = source.shape();
  enc.feature_dim = m.model.feature_dim;
  enc.hidden_sizes = m.model.hidden;
  ClassifierSpec cls;
  cls.feature_dim = m.model.feature_dim;
  cls.num_classes = source.label_domain_size();
  DiscriminatorSpec disc;
  disc.feature_dim = m.model.feature_dim;
  disc.hidden = m.model.disc_hidden;
  return build_models(enc, cls, disc, m.seed);
}

ModelBundle pretrained_bundle(const ExperimentManifest& m,
                              const DomainDataset& source,
                              const std::string& checkpoint) {
  if (!checkpoint.empty()) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    if (ckpt.bundle.encoder_spec.input_shape.dim != source.shape().dim) {
      throw std::invalid_argument(
          "checkpoint encoder does not match the dataset shape");
    }
    return std::move(ckpt.bundle);
  }
  ModelBundle bundle = build_models_from_manifest(m, source);
  return pretrain_source(std::move(bundle), source, m.pretrain.epochs,
                         m.pretrain.lr, m.seed + 1, m.pretrain.batch,
                         m.pretrain.optimizer);
}

void write_resolved_manifest(const ExperimentManifest& m, const fs::path& dir) {
  m.write_file(dir / "manifest.resolved.toml");
}

// flags shared by the subcommands that run or configure adaptation
struct Overrides {
  std::optional<std::string> mode, ablation, output_dir;
  std::optional<double> mix_ratio, gamma_adv, gamma_enc, gamma_dec, gamma_dis;
  std::optional<long long> seed, max_iters, warmup, batch;
};

void add_override_flags(CLI::App* cmd, Overrides& ov,
                        bool include_gamma_dec = true) {
  cmd->add_option("--mode", ov.mode, "balanced|imbalanced|partial");
  cmd->add_option("--ablation", ov.ablation, "full|no_dis|adda_only|adda_mix");
  cmd->add_option("--mix-ratio", ov.mix_ratio, "source share of target batches");
  cmd->add_option("--gamma-adv", ov.gamma_adv, "discriminator learning rate");
  cmd->add_option("--gamma-enc", ov.gamma_enc, "encoder learning rate");
  if (include_gamma_dec) {
    cmd->add_option("--gamma-dec", ov.gamma_dec, "clustering learning rate");
    cmd->add_option("--gamma-dis", ov.gamma_dis, "dissimilarity learning rate");
  }
  cmd->add_option("--seed", ov.seed, "seed overriding the manifest");
  cmd->add_option("--max-iters", ov.max_iters, "adaptation iterations");
  cmd->add_option("--warmup", ov.warmup, "adversarial-only warmup iterations");
  cmd->add_option("--batch", ov.batch, "minibatch size");
  cmd->add_option("--output-dir", ov.output_dir, "run output directory");
}

ExperimentManifest manifest_with_overrides(const std::string& config_path,
                                           const Overrides& ov) {
  ExperimentManifest m = ExperimentManifest::parse_file(config_path);
  if (ov.mode) m.adapt.mode = parse_adapt_mode(*ov.mode);
  if (ov.ablation) m.adapt.ablation = parse_ablation(*ov.ablation);
  if (ov.mix_ratio) {
    m.adapt.mix_ratio = *ov.mix_ratio;
    m.mix_ratio_set = true;
  }
  if (ov.gamma_adv) m.adapt.gamma_adv = *ov.gamma_adv;
  if (ov.gamma_enc) m.adapt.gamma_enc = *ov.gamma_enc;
  if (ov.gamma_dec) {
    m.adapt.gamma_dec = *ov.gamma_dec;
    m.adapt.gamma_dis.reset();  // re-couple to 2*gamma_dec unless pinned below
  }
  if (ov.gamma_dis) m.adapt.gamma_dis = *ov.gamma_dis;
  if (ov.seed) m.seed = static_cast<std::uint64_t>(*ov.seed);
  if (ov.max_iters) m.adapt.max_iters = static_cast<int>(*ov.max_iters);
  if (ov.warmup) {
    m.adapt.warmup_iters = static_cast<int>(*ov.warmup);
    m.warmup_set = true;
  }
  if (ov.batch) m.adapt.batch_size = static_cast<int>(*ov.batch);
  if (ov.output_dir) m.output_dir = *ov.output_dir;
  m.resolve_and_validate();
  return m;
}

int run_pretrain(const std::string& config, const Overrides& ov) {
  const ExperimentManifest m = manifest_with_overrides(config, ov);
  const DataPair data = build_data(m);
  const ModelBundle bundle = pretrained_bundle(m, data.source, "");

  const fs::path outdir(m.output_dir);
  fs::create_directories(outdir);
  write_resolved_manifest(m, outdir);
  save_checkpoint(Checkpoint{bundle, std::nullopt, 0}, outdir / "pretrained.ckpt");

  ModelBundle eval_bundle = bundle;
  const MetricsReport report = evaluate(eval_bundle, data.source, nullptr, 0);
  std::cout << "{\"stage\":\"pretrain\",\"source_acc\":" << report.overall_acc
            << "}" << std::endl;
  return 0;
}

int run_adapt(const std::string& config, const std::string& checkpoint,
              const Overrides& ov) {
  const ExperimentManifest m = manifest_with_overrides(config, ov);
  const DataPair data = build_data(m);
  ModelBundle bundle = pretrained_bundle(m, data.source, checkpoint);

  const fs::path outdir(m.output_dir);
  fs::create_directories(outdir);
  write_resolved_manifest(m, outdir);

  std::ofstream loss_csv(outdir / "loss_trace.csv", std::ios::trunc);
  if (!loss_csv) throw IoError("cannot write loss_trace.csv");
  loss_csv << "iter,L_adv,L_enc,L_dec,L_dis\n";
  loss_csv.precision(10);
  std::ofstream metrics_jsonl(outdir / "metrics.jsonl", std::ios::trunc);
  if (!metrics_jsonl) throw IoError("cannot write metrics.jsonl");

  RunSinks sinks;
  sinks.on_losses = [&](std::uint64_t iter, double adv, double enc, double dec,
                        double dis) {
    loss_csv << iter << ',' << adv << ',' << enc << ',' << dec << ',' << dis
             << '\n';
  };
  sinks.on_metrics = [&](const MetricsReport& report) {
    const std::string line = report.to_json();
    metrics_jsonl << line << '\n';
    std::cout << line << std::endl;
  };

  const RunResult result =
      run_adaptation(bundle, data.target, data.source, m.adapt, sinks);
  save_checkpoint(
      Checkpoint{result.state.bundle,
                 std::optional<Mat>(result.state.centroids.z),
                 result.state.iter},
      outdir / "final.ckpt");
  return 0;
}

int run_eval(const std::string& config, const std::string& checkpoint,
             const std::string& out_path, const Overrides& ov) {
  const ExperimentManifest m = manifest_with_overrides(config, ov);
  const DataPair data = build_data(m);
  Checkpoint ckpt = load_checkpoint(checkpoint);
  std::optional<Centroids> centroids;
  if (ckpt.centroids) {
    centroids.emplace(int(ckpt.centroids->rows()), int(ckpt.centroids->cols()));
    centroids->z = *ckpt.centroids;
  }
  const MetricsReport report =
      evaluate(ckpt.bundle, data.target, centroids ? &*centroids : nullptr,
               ckpt.iteration, m.adapt.alpha);
  const std::string line = report.to_json();
  std::cout << line << std::endl;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path);
    out << line << '\n';
  }
  return 0;
}

int run_synth(const std::string& config, const std::string& out_source,
              const std::string& out_target) {
  const ExperimentManifest m = ExperimentManifest::parse_file(config);
  if (m.data.kind != DataSpec::Kind::synthetic) {
    throw std::invalid_argument("synth requires data.kind = \"synthetic\"");
  }
  const DataPair data = build_data(m);
  save_rudx(data.source, out_source);
  save_rudx(data.target, out_target);
  std::cout << "wrote " << out_source << " (" << data.source.size()
            << " instances), " << out_target << " (" << data.target.size()
            << " instances)" << std::endl;
  return 0;
}

int run_sweep(const std::string& config, const std::string& grid_csv,
              const std::string& out_path, const Overrides& ov) {
  const ExperimentManifest m = manifest_with_overrides(config, ov);
  std::vector<double> grid;
  {
    std::istringstream in(grid_csv);
    std::string item;
    while (std::getline(in, item, ',')) {
      try {
        grid.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw std::invalid_argument("--gamma-dec: '" + item +
                                    "' is not a number");
      }
    }
  }
  if (grid.empty()) throw std::invalid_argument("--gamma-dec: empty grid");

  const DataPair data = build_data(m);
  const ModelBundle bundle = pretrained_bundle(m, data.source, "");
  const std::vector<SweepCell> cells =
      lr_sweep(bundle, data.target, data.source, m.adapt, grid);

  const fs::path out = out_path.empty()
                           ? fs::path(m.output_dir) / "sweep.csv"
                           : fs::path(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_sweep_csv(cells, out);
  for (const auto& cell : cells) {
    std::cout << "gamma_dec=" << cell.gamma_dec << " acc="
              << (cell.overall_acc ? std::to_string(*cell.overall_acc) : "n/a")
              << " status=" << cell.status << std::endl;
  }
  return 0;
}

int run_export(const std::string& config, const std::string& checkpoint,
               const std::string& out_path, const Overrides& ov) {
  const ExperimentManifest m = manifest_with_overrides(config, ov);
  const DataPair data = build_data(m);
  Checkpoint ckpt = load_checkpoint(checkpoint);
  std::optional<Centroids> centroids;
  if (ckpt.centroids) {
    centroids.emplace(int(ckpt.centroids->rows()), int(ckpt.centroids->cols()));
    centroids->z = *ckpt.centroids;
  }
  const std::vector<EmbeddingExportItem> items = {
      {&data.source, WhichEncoder::source},
      {&data.target, WhichEncoder::target},
  };
  export_embeddings(ckpt.bundle, items, centroids ? &*centroids : nullptr,
                    out_path);
  std::cout << "wrote " << out_path << std::endl;
  return 0;
}

// USPS ships as whitespace-separated text lines: label then 256 pixels in
// [-1, 1] for a 16x16 image.  We rescale to [0,1], bilinearly resize to
// 28x28 and store the result as a standard IDX pair.
int run_convert_usps(const std::string& input, const std::string& out_images,
                     const std::string& out_labels) {
  std::ifstream in(resolve_data_path(input));
  if (!in) throw IoError("cannot open " + input);
  std::vector<Vec> images;
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    double label_value;
    if (!(ls >> label_value)) throw IoError("usps: malformed label line");
    Vec pixels(256);
    for (int i = 0; i < 256; ++i) {
      double v;
      if (!(ls >> v)) throw IoError("usps: truncated pixel row");
      pixels(i) = (v + 1.0) / 2.0;  // [-1,1] -> [0,1]
    }
    images.push_back(std::move(pixels));
    labels.push_back(static_cast<int>(label_value));
  }
  if (images.empty()) throw IoError("usps: no instances in " + input);

  // bilinear 16x16 -> 28x28, corners mapped to corners
  const int src = 16, dst = 28;
  Mat out(static_cast<int>(images.size()), dst * dst);
  for (std::size_t n = 0; n < images.size(); ++n) {
    for (int y = 0; y < dst; ++y) {
      const double sy = y * double(src - 1) / double(dst - 1);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, src - 1);
      const double fy = sy - y0;
      for (int x = 0; x < dst; ++x) {
        const double sx = x * double(src - 1) / double(dst - 1);
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, src - 1);
        const double fx = sx - x0;
        const double v =
            (1 - fy) * ((1 - fx) * images[n](y0 * src + x0) +
                        fx * images[n](y0 * src + x1)) +
            fy * ((1 - fx) * images[n](y1 * src + x0) +
                  fx * images[n](y1 * src + x1));
        out(static_cast<int>(n), y * dst + x) = v;
      }
    }
  }
  DomainDataset ds(std::move(out), InstanceShape::image(1, dst, dst),
                   std::move(labels), 10, "usps");
  save_idx(ds, out_images, out_labels);
  std::cout << "wrote " << ds.size() << " instances to " << out_images
            << " / " << out_labels << std::endl;
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"robust unsupervised domain adaptation"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config, checkpoint, out_path, out_source, out_target, grid;
  std::string usps_in, usps_images, usps_labels;

  auto* pretrain = app.add_subcommand("pretrain", "train the source model");
  pretrain->add_option("--config", config, "experiment manifest")->required();
  add_override_flags(pretrain, ov);

  auto* adapt = app.add_subcommand("adapt", "run domain adaptation");
  adapt->add_option("--config", config, "experiment manifest")->required();
  adapt->add_option("--checkpoint", checkpoint, "pretrained checkpoint");
  add_override_flags(adapt, ov);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the target");
  eval->add_option("--config", config, "experiment manifest")->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")
      ->required();
  eval->add_option("--out", out_path, "write the metrics JSON here");
  add_override_flags(eval, ov);

  auto* synth = app.add_subcommand("synth", "generate a synthetic domain pair");
  synth->add_option("--config", config, "experiment manifest")->required();
  synth->add_option("--out-source", out_source, "source output path")->required();
  synth->add_option("--out-target", out_target, "target output path")->required();

  auto* sweep = app.add_subcommand("sweep", "clustering learning-rate sweep");
  sweep->add_option("--config", config, "experiment manifest")->required();
  sweep->add_option("--gamma-dec", grid, "comma-separated gamma_dec grid")
      ->required();
  sweep->add_option("--out", out_path, "sweep CSV path");
  add_override_flags(sweep, ov, /*include_gamma_dec=*/false);

  auto* exp = app.add_subcommand("export-embeddings",
                                 "dump encoder features and centroids as CSV");
  exp->add_option("--config", config, "experiment manifest")->required();
  exp->add_option("--checkpoint", checkpoint, "checkpoint to export")->required();
  exp->add_option("--out", out_path, "CSV output path")->required();
  add_override_flags(exp, ov);

  auto* usps = app.add_subcommand("convert-usps",
                                  "convert USPS text data into an IDX pair");
  usps->add_option("--input", usps_in, "USPS text file (label + 256 pixels)")
      ->required();
  usps->add_option("--out-images", usps_images, "IDX image output")->required();
  usps->add_option("--out-labels", usps_labels, "IDX label output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (pretrain->parsed()) return run_pretrain(config, ov);
    if (adapt->parsed()) return run_adapt(config, checkpoint, ov);
    if (eval->parsed()) return run_eval(config, checkpoint, out_path, ov);
    if (synth->parsed()) return run_synth(config, out_source, out_target);
    if (sweep->parsed()) return run_sweep(config, grid, out_path, ov);
    if (exp->parsed()) return run_export(config, checkpoint, out_path, ov);
    if (usps->parsed()) return run_convert_usps(usps_in, usps_images, usps_labels);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}

}  // namespace ruda::cli
