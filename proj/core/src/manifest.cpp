#include "ruda/manifest.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "ruda/errors.hpp"

namespace ruda {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void key_error(const std::string& key, const std::string& why) {
  throw std::invalid_argument("manifest key '" + key + "': " + why);
}

struct RawValue {
  std::string text;
  bool used = false;
};

class KeyValueFile {
 public:
  explicit KeyValueFile(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("manifest line " + std::to_string(line_no) +
                                    ": expected 'key = value'");
      }
      const std::string key = trim(stripped.substr(0, eq));
      if (key.empty()) {
        throw std::invalid_argument("manifest line " + std::to_string(line_no) +
                                    ": empty key");
      }
      if (values_.count(key)) key_error(key, "duplicate key");
      values_[key] = RawValue{trim(stripped.substr(eq + 1)), false};
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string raw(const std::string& key) {
    auto it = values_.find(key);
    it->second.used = true;
    return it->second.text;
  }

  std::string get_string(const std::string& key) {
    std::string v = raw(key);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
      return v.substr(1, v.size() - 2);
    }
    return v;
  }

  double get_double(const std::string& key) {
    const std::string v = raw(key);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) key_error(key, "expected a number, got '" + v + "'");
      return d;
    } catch (const std::invalid_argument&) {
      key_error(key, "expected a number, got '" + v + "'");
    } catch (const std::out_of_range&) {
      key_error(key, "number out of range: '" + v + "'");
    }
  }

  long long get_int(const std::string& key) {
    const std::string v = raw(key);
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      key_error(key, "expected an integer, got '" + v + "'");
    }
    return out;
  }

  bool get_bool(const std::string& key) {
    const std::string v = raw(key);
    if (v == "true") return true;
    if (v == "false") return false;
    key_error(key, "expected true/false, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) {
    std::string v = raw(key);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
      key_error(key, "expected a [..] list, got '" + v + "'");
    }
    v = v.substr(1, v.size() - 2);
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) items.push_back(t);
    }
    return items;
  }

  std::vector<double> get_double_list(const std::string& key) {
    std::vector<double> out;
    for (const auto& item : get_list(key)) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        key_error(key, "list entry '" + item + "' is not a number");
      }
    }
    return out;
  }

  std::vector<int> get_int_list(const std::string& key) {
    std::vector<int> out;
    for (const auto& item : get_list(key)) {
      try {
        out.push_back(std::stoi(item));
      } catch (const std::exception&) {
        key_error(key, "list entry '" + item + "' is not an integer");
      }
    }
    return out;
  }

  void reject_unused() const {
    for (const auto& [key, value] : values_) {
      if (!value.used) key_error(key, "unknown key");
    }
  }

 private:
  std::map<std::string, RawValue> values_;
};

}  // namespace

// ---- enum helpers -------------------------------------------------------------

std::string to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::balanced: return "balanced";
    case AdaptMode::imbalanced: return "imbalanced";
    case AdaptMode::partial: return "partial";
  }
  return "balanced";
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::full: return "full";
    case Ablation::no_dis: return "no_dis";
    case Ablation::adda_only: return "adda_only";
    case Ablation::adda_mix: return "adda_mix";
  }
  return "full";
}

std::string to_string(OptimizerKind opt) {
  return opt == OptimizerKind::sgd ? "sgd" : "adam";
}

std::string to_string(EncoderKind kind) {
  return kind == EncoderKind::conv_lenet ? "conv_lenet" : "mlp";
}

AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "balanced") return AdaptMode::balanced;
  if (s == "imbalanced") return AdaptMode::imbalanced;
  if (s == "partial") return AdaptMode::partial;
  throw std::invalid_argument("unknown mode '" + s +
                              "' (balanced|imbalanced|partial)");
}

Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_dis") return Ablation::no_dis;
  if (s == "adda_only") return Ablation::adda_only;
  if (s == "adda_mix") return Ablation::adda_mix;
  throw std::invalid_argument("unknown ablation '" + s +
                              "' (full|no_dis|adda_only|adda_mix)");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (sgd|adam)");
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "mlp") return EncoderKind::mlp;
  if (s == "conv_lenet") return EncoderKind::conv_lenet;
  throw std::invalid_argument("unknown encoder '" + s + "' (mlp|conv_lenet)");
}

// ---- parse ----------------------------------------------------------------------

ExperimentManifest ExperimentManifest::parse_text(const std::string& text) {
  KeyValueFile kv(text);
  ExperimentManifest m;

  if (kv.has("description")) m.description = kv.get_string("description");
  if (kv.has("output_dir")) m.output_dir = kv.get_string("output_dir");
  if (kv.has("seed")) {
    const long long s = kv.get_int("seed");
    if (s < 0) key_error("seed", "must be >= 0");
    m.seed = static_cast<std::uint64_t>(s);
  }

  if (kv.has("data.kind")) {
    const std::string kind = kv.get_string("data.kind");
    if (kind == "synthetic") {
      m.data.kind = DataSpec::Kind::synthetic;
    } else if (kind == "idx") {
      m.data.kind = DataSpec::Kind::idx;
    } else if (kind == "rudx") {
      m.data.kind = DataSpec::Kind::rudx;
    } else {
      key_error("data.kind", "unknown kind '" + kind + "'");
    }
  }
  if (kv.has("data.num_classes")) {
    m.data.synthetic.num_classes = static_cast<int>(kv.get_int("data.num_classes"));
    if (m.data.synthetic.num_classes < 2) key_error("data.num_classes", "must be >= 2");
  }
  if (kv.has("data.per_class")) {
    m.data.synthetic.per_class = static_cast<int>(kv.get_int("data.per_class"));
    if (m.data.synthetic.per_class < 1) key_error("data.per_class", "must be >= 1");
  }
  if (kv.has("data.dim")) {
    m.data.synthetic.dim = static_cast<int>(kv.get_int("data.dim"));
    if (m.data.synthetic.dim < 2) key_error("data.dim", "must be >= 2");
  }
  if (kv.has("data.shift")) m.data.synthetic.shift = kv.get_double_list("data.shift");
  if (kv.has("data.rotation")) m.data.synthetic.rotation = kv.get_double("data.rotation");
  if (kv.has("data.noise_sd")) {
    m.data.synthetic.noise_sd = kv.get_double("data.noise_sd");
    if (m.data.synthetic.noise_sd < 0.0) key_error("data.noise_sd", "must be >= 0");
  }
  if (kv.has("data.radius")) {
    m.data.synthetic.radius = kv.get_double("data.radius");
    if (m.data.synthetic.radius <= 0.0) key_error("data.radius", "must be > 0");
  }
  if (kv.has("data.source_images")) m.data.source_images = kv.get_string("data.source_images");
  if (kv.has("data.source_labels")) m.data.source_labels = kv.get_string("data.source_labels");
  if (kv.has("data.target_images")) m.data.target_images = kv.get_string("data.target_images");
  if (kv.has("data.target_labels")) m.data.target_labels = kv.get_string("data.target_labels");
  if (kv.has("data.source_rudx")) m.data.source_rudx = kv.get_string("data.source_rudx");
  if (kv.has("data.target_rudx")) m.data.target_rudx = kv.get_string("data.target_rudx");
  if (kv.has("data.resample")) {
    const std::string r = kv.get_string("data.resample");
    if (r == "none") {
      m.data.resample = DataSpec::Resample::none;
    } else if (r == "linear_decay") {
      m.data.resample = DataSpec::Resample::linear_decay;
    } else {
      key_error("data.resample", "unknown resample '" + r + "'");
    }
  }
  if (kv.has("data.decay_start")) m.data.decay_start = kv.get_double("data.decay_start");
  if (kv.has("data.decay_end")) m.data.decay_end = kv.get_double("data.decay_end");
  if (kv.has("data.keep_classes")) m.data.keep_classes = kv.get_int_list("data.keep_classes");
  if (kv.has("data.balance_source")) m.data.balance_source = kv.get_bool("data.balance_source");
  if (kv.has("data.subsample_source")) {
    m.data.subsample_source = static_cast<int>(kv.get_int("data.subsample_source"));
    if (m.data.subsample_source < 0) key_error("data.subsample_source", "must be >= 0");
  }
  if (kv.has("data.subsample_target")) {
    m.data.subsample_target = static_cast<int>(kv.get_int("data.subsample_target"));
    if (m.data.subsample_target < 0) key_error("data.subsample_target", "must be >= 0");
  }

  if (kv.has("model.encoder")) {
    try {
      m.model.encoder = parse_encoder_kind(kv.get_string("model.encoder"));
    } catch (const std::invalid_argument& e) {
      key_error("model.encoder", e.what());
    }
  }
  if (kv.has("model.feature_dim")) {
    m.model.feature_dim = static_cast<int>(kv.get_int("model.feature_dim"));
    if (m.model.feature_dim < 2) key_error("model.feature_dim", "must be >= 2");
  }
  if (kv.has("model.hidden")) {
    m.model.hidden = kv.get_int_list("model.hidden");
    for (int h : m.model.hidden) {
      if (h < 1) key_error("model.hidden", "sizes must be >= 1");
    }
  }
  if (kv.has("model.disc_hidden")) {
    const std::vector<int> h = kv.get_int_list("model.disc_hidden");
    if (h.size() != 2 || h[0] < 1 || h[1] < 1) {
      key_error("model.disc_hidden", "expected two positive sizes");
    }
    m.model.disc_hidden = {h[0], h[1]};
  }

  if (kv.has("pretrain.epochs")) {
    m.pretrain.epochs = static_cast<int>(kv.get_int("pretrain.epochs"));
    if (m.pretrain.epochs < 0) key_error("pretrain.epochs", "must be >= 0");
  }
  if (kv.has("pretrain.lr")) {
    m.pretrain.lr = kv.get_double("pretrain.lr");
    if (m.pretrain.lr <= 0.0) key_error("pretrain.lr", "must be > 0");
  }
  if (kv.has("pretrain.batch")) {
    m.pretrain.batch = static_cast<int>(kv.get_int("pretrain.batch"));
    if (m.pretrain.batch < 1) key_error("pretrain.batch", "must be >= 1");
  }
  if (kv.has("pretrain.optimizer")) {
    try {
      m.pretrain.optimizer = parse_optimizer(kv.get_string("pretrain.optimizer"));
    } catch (const std::invalid_argument& e) {
      key_error("pretrain.optimizer", e.what());
    }
  }

  const auto positive_rate = [&](const char* key, double& dst) {
    if (kv.has(key)) {
      dst = kv.get_double(key);
      if (dst <= 0.0) key_error(key, "must be > 0");
    }
  };
  positive_rate("adapt.gamma_adv", m.adapt.gamma_adv);
  positive_rate("adapt.gamma_enc", m.adapt.gamma_enc);
  positive_rate("adapt.gamma_dec", m.adapt.gamma_dec);
  if (kv.has("adapt.gamma_dis")) {
    const double g = kv.get_double("adapt.gamma_dis");
    if (g <= 0.0) key_error("adapt.gamma_dis", "must be > 0");
    m.adapt.gamma_dis = g;
  }
  if (kv.has("adapt.warmup")) {
    m.adapt.warmup_iters = static_cast<int>(kv.get_int("adapt.warmup"));
    if (m.adapt.warmup_iters < 0) key_error("adapt.warmup", "must be >= 0");
    m.warmup_set = true;
  }
  if (kv.has("adapt.batch")) {
    m.adapt.batch_size = static_cast<int>(kv.get_int("adapt.batch"));
    if (m.adapt.batch_size < 1) key_error("adapt.batch", "must be >= 1");
  }
  if (kv.has("adapt.max_iters")) {
    m.adapt.max_iters = static_cast<int>(kv.get_int("adapt.max_iters"));
    if (m.adapt.max_iters < 1) key_error("adapt.max_iters", "must be >= 1");
  }
  if (kv.has("adapt.mode")) {
    try {
      m.adapt.mode = parse_adapt_mode(kv.get_string("adapt.mode"));
    } catch (const std::invalid_argument& e) {
      key_error("adapt.mode", e.what());
    }
  }
  if (kv.has("adapt.mix_ratio")) {
    m.adapt.mix_ratio = kv.get_double("adapt.mix_ratio");
    if (m.adapt.mix_ratio < 0.0 || m.adapt.mix_ratio > 1.0) {
      key_error("adapt.mix_ratio", "must be in [0, 1]");
    }
    m.mix_ratio_set = true;
  }
  if (kv.has("adapt.ablation")) {
    try {
      m.adapt.ablation = parse_ablation(kv.get_string("adapt.ablation"));
    } catch (const std::invalid_argument& e) {
      key_error("adapt.ablation", e.what());
    }
  }
  if (kv.has("adapt.optimizer")) {
    try {
      m.adapt.optimizer = parse_optimizer(kv.get_string("adapt.optimizer"));
    } catch (const std::invalid_argument& e) {
      key_error("adapt.optimizer", e.what());
    }
  }
  if (kv.has("adapt.alpha")) {
    m.adapt.alpha = kv.get_double("adapt.alpha");
    if (m.adapt.alpha <= 0.0) key_error("adapt.alpha", "must be > 0");
  }
  if (kv.has("adapt.eval_interval")) {
    m.adapt.eval_interval = static_cast<int>(kv.get_int("adapt.eval_interval"));
    if (m.adapt.eval_interval < 1) key_error("adapt.eval_interval", "must be >= 1");
  }
  if (kv.has("adapt.early_stop")) m.adapt.early_stop = kv.get_bool("adapt.early_stop");
  if (kv.has("adapt.churn_threshold")) {
    m.adapt.churn_threshold = kv.get_double("adapt.churn_threshold");
    if (m.adapt.churn_threshold <= 0.0) key_error("adapt.churn_threshold", "must be > 0");
  }
  if (kv.has("adapt.churn_window")) {
    m.adapt.churn_window = static_cast<int>(kv.get_int("adapt.churn_window"));
    if (m.adapt.churn_window < 1) key_error("adapt.churn_window", "must be >= 1");
  }

  kv.reject_unused();
  m.resolve_and_validate();
  return m;
}

void ExperimentManifest::resolve_and_validate() {
  if (data.synthetic.shift.empty()) {
    data.synthetic.shift.assign(data.synthetic.dim, 0.0);
  }
  if (static_cast<int>(data.synthetic.shift.size()) != data.synthetic.dim) {
    key_error("data.shift", "length must equal data.dim");
  }
  if (data.kind == DataSpec::Kind::idx) {
    if (data.source_images.empty() || data.source_labels.empty() ||
        data.target_images.empty() || data.target_labels.empty()) {
      key_error("data.source_images",
                "idx data needs source/target image and label paths");
    }
  }
  if (data.kind == DataSpec::Kind::rudx) {
    if (data.source_rudx.empty() || data.target_rudx.empty()) {
      key_error("data.source_rudx", "rudx data needs source and target paths");
    }
  }
  if (!(0.0 < data.decay_end && data.decay_end <= data.decay_start &&
        data.decay_start <= 1.0)) {
    key_error("data.decay_start", "need 0 < decay_end <= decay_start <= 1");
  }

  adapt.seed = seed;
  if (adapt.mode == AdaptMode::partial) {
    if (!warmup_set) adapt.warmup_iters = 0;
    if (!mix_ratio_set && adapt.mix_ratio == 0.0) adapt.mix_ratio = 0.5;
    if (adapt.mix_ratio == 0.0) {
      key_error("adapt.mix_ratio", "partial mode requires a nonzero mix_ratio");
    }
  }
  adapt.validate();
}

// ---- serialize ---------------------------------------------------------------------

std::string ExperimentManifest::serialize() const {
  std::ostringstream out;
  out.precision(17);
  const auto list_d = [&](const std::vector<double>& v) {
    std::ostringstream s;
    s.precision(17);
    s << '[';
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v[i];
    s << ']';
    return s.str();
  };
  const auto list_i = [&](const std::vector<int>& v) {
    std::ostringstream s;
    s << '[';
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v[i];
    s << ']';
    return s.str();
  };

  out << "description = \"" << description << "\"\n";
  out << "output_dir = \"" << output_dir << "\"\n";
  out << "seed = " << seed << "\n";
  out << "\n";
  switch (data.kind) {
    case DataSpec::Kind::synthetic: out << "data.kind = \"synthetic\"\n"; break;
    case DataSpec::Kind::idx: out << "data.kind = \"idx\"\n"; break;
    case DataSpec::Kind::rudx: out << "data.kind = \"rudx\"\n"; break;
  }
  out << "data.num_classes = " << data.synthetic.num_classes << "\n";
  out << "data.per_class = " << data.synthetic.per_class << "\n";
  out << "data.dim = " << data.synthetic.dim << "\n";
  out << "data.shift = " << list_d(data.synthetic.shift) << "\n";
  out << "data.rotation = " << data.synthetic.rotation << "\n";
  out << "data.noise_sd = " << data.synthetic.noise_sd << "\n";
  out << "data.radius = " << data.synthetic.radius << "\n";
  if (!data.source_images.empty()) out << "data.source_images = \"" << data.source_images << "\"\n";
  if (!data.source_labels.empty()) out << "data.source_labels = \"" << data.source_labels << "\"\n";
  if (!data.target_images.empty()) out << "data.target_images = \"" << data.target_images << "\"\n";
  if (!data.target_labels.empty()) out << "data.target_labels = \"" << data.target_labels << "\"\n";
  if (!data.source_rudx.empty()) out << "data.source_rudx = \"" << data.source_rudx << "\"\n";
  if (!data.target_rudx.empty()) out << "data.target_rudx = \"" << data.target_rudx << "\"\n";
  out << "data.resample = \""
      << (data.resample == DataSpec::Resample::linear_decay ? "linear_decay" : "none")
      << "\"\n";
  out << "data.decay_start = " << data.decay_start << "\n";
  out << "data.decay_end = " << data.decay_end << "\n";
  if (!data.keep_classes.empty()) {
    out << "data.keep_classes = " << list_i(data.keep_classes) << "\n";
  }
  out << "data.balance_source = " << (data.balance_source ? "true" : "false") << "\n";
  out << "data.subsample_source = " << data.subsample_source << "\n";
  out << "data.subsample_target = " << data.subsample_target << "\n";
  out << "\n";
  out << "model.encoder = \"" << to_string(model.encoder) << "\"\n";
  out << "model.feature_dim = " << model.feature_dim << "\n";
  out << "model.hidden = " << list_i(model.hidden) << "\n";
  out << "model.disc_hidden = [" << model.disc_hidden[0] << ", "
      << model.disc_hidden[1] << "]\n";
  out << "\n";
  out << "pretrain.epochs = " << pretrain.epochs << "\n";
  out << "pretrain.lr = " << pretrain.lr << "\n";
  out << "pretrain.batch = " << pretrain.batch << "\n";
  out << "pretrain.optimizer = \"" << to_string(pretrain.optimizer) << "\"\n";
  out << "\n";
  out << "adapt.gamma_adv = " << adapt.gamma_adv << "\n";
  out << "adapt.gamma_enc = " << adapt.gamma_enc << "\n";
  out << "adapt.gamma_dec = " << adapt.gamma_dec << "\n";
  if (adapt.gamma_dis) out << "adapt.gamma_dis = " << *adapt.gamma_dis << "\n";
  out << "adapt.warmup = " << adapt.warmup_iters << "\n";
  out << "adapt.batch = " << adapt.batch_size << "\n";
  out << "adapt.max_iters = " << adapt.max_iters << "\n";
  out << "adapt.mode = \"" << to_string(adapt.mode) << "\"\n";
  out << "adapt.mix_ratio = " << adapt.mix_ratio << "\n";
  out << "adapt.ablation = \"" << to_string(adapt.ablation) << "\"\n";
  out << "adapt.optimizer = \"" << to_string(adapt.optimizer) << "\"\n";
  out << "adapt.alpha = " << adapt.alpha << "\n";
  out << "adapt.eval_interval = " << adapt.eval_interval << "\n";
  out << "adapt.early_stop = " << (adapt.early_stop ? "true" : "false") << "\n";
  out << "adapt.churn_threshold = " << adapt.churn_threshold << "\n";
  out << "adapt.churn_window = " << adapt.churn_window << "\n";
  return out.str();
}

ExperimentManifest ExperimentManifest::parse_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

void ExperimentManifest::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << serialize();
  if (!out) throw IoError("short write while writing " + path.string());
}

}  // namespace ruda
