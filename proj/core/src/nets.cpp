#include "ruda/nets.hpp"

#include <bit>
#include <fstream>

#include "ruda/errors.hpp"

namespace ruda {

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'U', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

nn::Net build_encoder(const EncoderSpec& spec) {
  nn::Net net;
  if (spec.kind == EncoderKind::mlp) {
    int in = spec.input_shape.dim;
    for (int h : spec.hidden_sizes) {
      net.add(std::make_unique<nn::Linear>(in, h));
      net.add(std::make_unique<nn::Relu>());
      in = h;
    }
    net.add(std::make_unique<nn::Linear>(in, spec.feature_dim));
  } else {
    // modified LeNet: conv(20,5x5) -> pool -> conv(50,5x5) -> pool -> fc+relu
    const auto& s = spec.input_shape;
    net.add(std::make_unique<nn::Conv2d>(s.channels, 20, 5, s.height, s.width));
    const int h1 = s.height - 4, w1 = s.width - 4;
    net.add(std::make_unique<nn::MaxPool2>(20, h1, w1));
    const int h2 = h1 / 2 - 4, w2 = w1 / 2 - 4;
    net.add(std::make_unique<nn::Conv2d>(20, 50, 5, h1 / 2, w1 / 2));
    net.add(std::make_unique<nn::MaxPool2>(50, h2, w2));
    net.add(std::make_unique<nn::Linear>(50 * (h2 / 2) * (w2 / 2),
                                         spec.feature_dim));
    net.add(std::make_unique<nn::Relu>());
  }
  return net;
}

nn::Net build_classifier(const ClassifierSpec& spec) {
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(spec.feature_dim, spec.num_classes));
  return net;
}

nn::Net build_discriminator(const DiscriminatorSpec& spec) {
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(spec.feature_dim, spec.hidden[0]));
  net.add(std::make_unique<nn::Relu>());
  net.add(std::make_unique<nn::Linear>(spec.hidden[0], spec.hidden[1]));
  net.add(std::make_unique<nn::Relu>());
  net.add(std::make_unique<nn::Linear>(spec.hidden[1], 2));
  return net;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  static_assert(std::endian::native == std::endian::little);
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

void write_vec(std::ostream& out, const Vec& v) {
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

Vec read_vec(std::istream& in, const char* what) {
  const auto n = read_le<std::uint64_t>(in, what);
  Vec v(static_cast<Eigen::Index>(n));
  if (!in.read(reinterpret_cast<char*>(v.data()), n * sizeof(double))) {
    throw IoError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void EncoderSpec::validate() const {
  if (feature_dim < 2) {
    throw std::invalid_argument("encoder feature_dim must be >= 2");
  }
  if (kind == EncoderKind::conv_lenet) {
    if (!(input_shape == InstanceShape::image(1, 28, 28))) {
      throw std::invalid_argument("conv_lenet requires 1x28x28 input");
    }
  } else {
    if (input_shape.dim < 1) {
      throw std::invalid_argument("mlp encoder needs a positive input dim");
    }
    for (int h : hidden_sizes) {
      if (h < 1) throw std::invalid_argument("mlp hidden sizes must be >= 1");
    }
  }
}

void ClassifierSpec::validate() const {
  if (feature_dim < 2) {
    throw std::invalid_argument("classifier feature_dim must be >= 2");
  }
  if (num_classes < 2) {
    throw std::invalid_argument("classifier num_classes must be >= 2");
  }
}

void DiscriminatorSpec::validate() const {
  if (feature_dim < 2) {
    throw std::invalid_argument("discriminator feature_dim must be >= 2");
  }
  if (hidden[0] < 1 || hidden[1] < 1) {
    throw std::invalid_argument("discriminator hidden sizes must be >= 1");
  }
}

ModelBundle build_models(const EncoderSpec& enc, const ClassifierSpec& cls,
                         const DiscriminatorSpec& disc, std::uint64_t seed) {
  enc.validate();
  cls.validate();
  disc.validate();
  if (enc.feature_dim != cls.feature_dim || enc.feature_dim != disc.feature_dim) {
    throw std::invalid_argument("feature_dim mismatch across model specs");
  }

  ModelBundle bundle;
  bundle.encoder_spec = enc;
  bundle.classifier_spec = cls;
  bundle.discriminator_spec = disc;
  bundle.source_encoder = build_encoder(enc);
  bundle.classifier = build_classifier(cls);
  bundle.discriminator = build_discriminator(disc);

  Rng rng(seed);
  bundle.source_encoder.init(rng);
  bundle.classifier.init(rng);
  bundle.discriminator.init(rng);
  bundle.target_encoder = bundle.source_encoder;  // warm start
  return bundle;
}

Mat encode(ModelBundle& bundle, WhichEncoder which, const Mat& inputs) {
  if (inputs.cols() != bundle.encoder_spec.input_shape.dim) {
    throw std::invalid_argument("encode: input width does not match encoder");
  }
  nn::Net& net = which == WhichEncoder::source ? bundle.source_encoder
                                               : bundle.target_encoder;
  Mat features = net.forward(inputs);
  if (!features.allFinite()) {
    throw NumericError("encoder produced non-finite features");
  }
  return features;
}

Mat classify(ModelBundle& bundle, const Mat& features) {
  if (!features.allFinite()) {
    throw NumericError("classify: non-finite features");
  }
  return nn::softmax_rows(bundle.classifier.forward(features));
}

Vec discriminate(ModelBundle& bundle, const Mat& features) {
  if (!features.allFinite()) {
    throw NumericError("discriminate: non-finite features");
  }
  const Mat probs = nn::softmax_rows(bundle.discriminator.forward(features));
  return probs.col(0);  // column 0 is the "source" class
}

// ---- checkpoints -------------------------------------------------------------

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kCheckpointMagic, 4);
    write_le<std::uint32_t>(out, kCheckpointVersion);

    const auto& enc = ckpt.bundle.encoder_spec;
    write_le<std::uint8_t>(out, enc.kind == EncoderKind::conv_lenet ? 1 : 0);
    write_le<std::int32_t>(out, enc.input_shape.channels);
    write_le<std::int32_t>(out, enc.input_shape.height);
    write_le<std::int32_t>(out, enc.input_shape.width);
    write_le<std::int32_t>(out, enc.input_shape.dim);
    write_le<std::int32_t>(out, enc.feature_dim);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(enc.hidden_sizes.size()));
    for (int h : enc.hidden_sizes) write_le<std::int32_t>(out, h);

    write_le<std::int32_t>(out, ckpt.bundle.classifier_spec.num_classes);
    write_le<std::int32_t>(out, ckpt.bundle.discriminator_spec.hidden[0]);
    write_le<std::int32_t>(out, ckpt.bundle.discriminator_spec.hidden[1]);

    write_le<std::uint8_t>(out, ckpt.bundle.source_encoder_frozen);
    write_le<std::uint8_t>(out, ckpt.bundle.target_encoder_frozen);
    write_le<std::uint8_t>(out, ckpt.bundle.classifier_frozen);
    write_le<std::uint8_t>(out, ckpt.bundle.discriminator_frozen);
    write_le<std::uint64_t>(out, ckpt.iteration);

    write_vec(out, ckpt.bundle.source_encoder.parameters());
    write_vec(out, ckpt.bundle.target_encoder.parameters());
    write_vec(out, ckpt.bundle.classifier.parameters());
    write_vec(out, ckpt.bundle.discriminator.parameters());

    write_le<std::uint8_t>(out, ckpt.centroids.has_value());
    if (ckpt.centroids) {
      write_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.centroids->rows()));
      write_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.centroids->cols()));
      for (int r = 0; r < ckpt.centroids->rows(); ++r) {
        for (int c = 0; c < ckpt.centroids->cols(); ++c) {
          write_le<double>(out, (*ckpt.centroids)(r, c));
        }
      }
    }
    if (!out) throw IoError("short write while saving " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(path.string() + ": malformed magic number");
  }
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " +
                  std::to_string(version));
  }

  EncoderSpec enc;
  enc.kind = read_le<std::uint8_t>(in, "encoder kind") == 1
                 ? EncoderKind::conv_lenet
                 : EncoderKind::mlp;
  enc.input_shape.channels = read_le<std::int32_t>(in, "shape");
  enc.input_shape.height = read_le<std::int32_t>(in, "shape");
  enc.input_shape.width = read_le<std::int32_t>(in, "shape");
  enc.input_shape.dim = read_le<std::int32_t>(in, "shape");
  enc.feature_dim = read_le<std::int32_t>(in, "feature_dim");
  const auto n_hidden = read_le<std::uint32_t>(in, "hidden count");
  enc.hidden_sizes.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) {
    enc.hidden_sizes.push_back(read_le<std::int32_t>(in, "hidden size"));
  }

  ClassifierSpec cls;
  cls.feature_dim = enc.feature_dim;
  cls.num_classes = read_le<std::int32_t>(in, "num_classes");
  DiscriminatorSpec disc;
  disc.feature_dim = enc.feature_dim;
  disc.hidden[0] = read_le<std::int32_t>(in, "disc hidden");
  disc.hidden[1] = read_le<std::int32_t>(in, "disc hidden");

  Checkpoint ckpt;
  ckpt.bundle = build_models(enc, cls, disc, /*seed=*/0);
  ckpt.bundle.source_encoder_frozen = read_le<std::uint8_t>(in, "flags");
  ckpt.bundle.target_encoder_frozen = read_le<std::uint8_t>(in, "flags");
  ckpt.bundle.classifier_frozen = read_le<std::uint8_t>(in, "flags");
  ckpt.bundle.discriminator_frozen = read_le<std::uint8_t>(in, "flags");
  ckpt.iteration = read_le<std::uint64_t>(in, "iteration");

  ckpt.bundle.source_encoder.set_parameters(read_vec(in, "source encoder"));
  ckpt.bundle.target_encoder.set_parameters(read_vec(in, "target encoder"));
  ckpt.bundle.classifier.set_parameters(read_vec(in, "classifier"));
  ckpt.bundle.discriminator.set_parameters(read_vec(in, "discriminator"));

  if (read_le<std::uint8_t>(in, "centroid flag")) {
    const auto rows = read_le<std::uint64_t>(in, "centroid rows");
    const auto cols = read_le<std::uint64_t>(in, "centroid cols");
    Mat z(rows, cols);
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            read_le<double>(in, "centroids");
      }
    }
    ckpt.centroids = std::move(z);
  }
  return ckpt;
}

}  // namespace ruda
