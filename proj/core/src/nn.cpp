#include "ruda/nn.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace ruda::nn {

namespace {

double glorot_limit(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

void fill_uniform(Mat& m, Rng& rng, double limit) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      m(r, c) = rng.uniform(-limit, limit);
    }
  }
}

}  // namespace

double Layer::kink_margin() const {
  return std::numeric_limits<double>::infinity();
}

// ---- Linear ----------------------------------------------------------------

Linear::Linear(int in_dim, int out_dim)
    : weight(Mat::Zero(out_dim, in_dim)),
      bias(Vec::Zero(out_dim)),
      grad_weight(Mat::Zero(out_dim, in_dim)),
      grad_bias(Vec::Zero(out_dim)) {}

Mat Linear::forward(const Mat& x) {
  input_ = x;
  return (x * weight.transpose()).rowwise() + bias.transpose();
}

Mat Linear::backward(const Mat& grad_out) {
  grad_weight.noalias() += grad_out.transpose() * input_;
  grad_bias.noalias() += grad_out.colwise().sum().transpose();
  return grad_out * weight;
}

int Linear::parameter_count() const {
  return static_cast<int>(weight.size() + bias.size());
}

void Linear::collect_parameters(double* dst) const {
  for (int r = 0; r < weight.rows(); ++r)
    for (int c = 0; c < weight.cols(); ++c) *dst++ = weight(r, c);
  for (int i = 0; i < bias.size(); ++i) *dst++ = bias(i);
}

void Linear::load_parameters(const double* src) {
  for (int r = 0; r < weight.rows(); ++r)
    for (int c = 0; c < weight.cols(); ++c) weight(r, c) = *src++;
  for (int i = 0; i < bias.size(); ++i) bias(i) = *src++;
}

void Linear::collect_gradients(double* dst) const {
  for (int r = 0; r < grad_weight.rows(); ++r)
    for (int c = 0; c < grad_weight.cols(); ++c) *dst++ = grad_weight(r, c);
  for (int i = 0; i < grad_bias.size(); ++i) *dst++ = grad_bias(i);
}

void Linear::zero_gradients() {
  grad_weight.setZero();
  grad_bias.setZero();
}

void Linear::init(Rng& rng) {
  fill_uniform(weight, rng,
               glorot_limit(int(weight.cols()), int(weight.rows())));
  bias.setZero();
}

std::unique_ptr<Layer> Linear::clone() const {
  auto copy = std::make_unique<Linear>(int(weight.cols()), int(weight.rows()));
  copy->weight = weight;
  copy->bias = bias;
  return copy;
}

// ---- Relu ------------------------------------------------------------------

Mat Relu::forward(const Mat& x) {
  input_ = x;
  return x.cwiseMax(0.0);
}

Mat Relu::backward(const Mat& grad_out) {
  return (input_.array() > 0.0).cast<double>() * grad_out.array();
}

double Relu::kink_margin() const {
  if (input_.size() == 0) return std::numeric_limits<double>::infinity();
  return input_.cwiseAbs().minCoeff();
}

std::unique_ptr<Layer> Relu::clone() const { return std::make_unique<Relu>(); }

// ---- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int in_height,
               int in_width)
    : weight(Mat::Zero(out_channels, in_channels * kernel * kernel)),
      bias(Vec::Zero(out_channels)),
      grad_weight(Mat::Zero(out_channels, in_channels * kernel * kernel)),
      grad_bias(Vec::Zero(out_channels)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      in_height_(in_height),
      in_width_(in_width) {
  if (in_height < kernel || in_width < kernel) {
    throw std::invalid_argument("Conv2d: kernel larger than input");
  }
}

Mat Conv2d::im2col(const Vec& image) const {
  const int oh = out_height(), ow = out_width();
  Mat col(in_channels_ * kernel_ * kernel_, oh * ow);
  for (int ci = 0; ci < in_channels_; ++ci) {
    const int plane = ci * in_height_ * in_width_;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const int row = (ci * kernel_ + ky) * kernel_ + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int src = plane + (oy + ky) * in_width_ + kx;
          for (int ox = 0; ox < ow; ++ox) {
            col(row, oy * ow + ox) = image(src + ox);
          }
        }
      }
    }
  }
  return col;
}

Mat Conv2d::forward(const Mat& x) {
  const int n = static_cast<int>(x.rows());
  const int oh = out_height(), ow = out_width();
  Mat out(n, out_channels_ * oh * ow);
  cols_.resize(n);
  for (int i = 0; i < n; ++i) {
    cols_[i] = im2col(x.row(i).transpose());
    Mat res = weight * cols_[i];  // out_channels x (oh*ow)
    res.colwise() += bias;
    for (int oc = 0; oc < out_channels_; ++oc) {
      out.block(i, oc * oh * ow, 1, oh * ow) = res.row(oc);
    }
  }
  return out;
}

Mat Conv2d::backward(const Mat& grad_out) {
  const int n = static_cast<int>(grad_out.rows());
  const int oh = out_height(), ow = out_width();
  Mat grad_in = Mat::Zero(n, in_channels_ * in_height_ * in_width_);
  for (int i = 0; i < n; ++i) {
    Mat gy(out_channels_, oh * ow);
    for (int oc = 0; oc < out_channels_; ++oc) {
      gy.row(oc) = grad_out.block(i, oc * oh * ow, 1, oh * ow);
    }
    grad_weight.noalias() += gy * cols_[i].transpose();
    grad_bias.noalias() += gy.rowwise().sum();
    const Mat gcol = weight.transpose() * gy;  // col2im scatter below
    for (int ci = 0; ci < in_channels_; ++ci) {
      const int plane = ci * in_height_ * in_width_;
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          const int row = (ci * kernel_ + ky) * kernel_ + kx;
          for (int oy = 0; oy < oh; ++oy) {
            const int dst = plane + (oy + ky) * in_width_ + kx;
            for (int ox = 0; ox < ow; ++ox) {
              grad_in(i, dst + ox) += gcol(row, oy * ow + ox);
            }
          }
        }
      }
    }
  }
  return grad_in;
}

int Conv2d::parameter_count() const {
  return static_cast<int>(weight.size() + bias.size());
}

void Conv2d::collect_parameters(double* dst) const {
  for (int r = 0; r < weight.rows(); ++r)
    for (int c = 0; c < weight.cols(); ++c) *dst++ = weight(r, c);
  for (int i = 0; i < bias.size(); ++i) *dst++ = bias(i);
}

void Conv2d::load_parameters(const double* src) {
  for (int r = 0; r < weight.rows(); ++r)
    for (int c = 0; c < weight.cols(); ++c) weight(r, c) = *src++;
  for (int i = 0; i < bias.size(); ++i) bias(i) = *src++;
}

void Conv2d::collect_gradients(double* dst) const {
  for (int r = 0; r < grad_weight.rows(); ++r)
    for (int c = 0; c < grad_weight.cols(); ++c) *dst++ = grad_weight(r, c);
  for (int i = 0; i < grad_bias.size(); ++i) *dst++ = grad_bias(i);
}

void Conv2d::zero_gradients() {
  grad_weight.setZero();
  grad_bias.setZero();
}

void Conv2d::init(Rng& rng) {
  const int fan_in = in_channels_ * kernel_ * kernel_;
  const int fan_out = out_channels_ * kernel_ * kernel_;
  fill_uniform(weight, rng, glorot_limit(fan_in, fan_out));
  bias.setZero();
}

std::unique_ptr<Layer> Conv2d::clone() const {
  auto copy = std::make_unique<Conv2d>(in_channels_, out_channels_, kernel_,
                                       in_height_, in_width_);
  copy->weight = weight;
  copy->bias = bias;
  return copy;
}

// ---- MaxPool2 --------------------------------------------------------------

MaxPool2::MaxPool2(int channels, int in_height, int in_width)
    : channels_(channels), in_height_(in_height), in_width_(in_width) {
  if (in_height % 2 != 0 || in_width % 2 != 0) {
    throw std::invalid_argument("MaxPool2: spatial dims must be even");
  }
}

Mat MaxPool2::forward(const Mat& x) {
  const int n = static_cast<int>(x.rows());
  const int oh = in_height_ / 2, ow = in_width_ / 2;
  Mat out(n, channels_ * oh * ow);
  argmax_.assign(n, std::vector<int>(channels_ * oh * ow));
  margin_ = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < channels_; ++c) {
      const int plane = c * in_height_ * in_width_;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const int base = plane + (2 * oy) * in_width_ + 2 * ox;
          const int cand[4] = {base, base + 1, base + in_width_,
                               base + in_width_ + 1};
          int best = cand[0];
          double runner_up = -std::numeric_limits<double>::infinity();
          for (int k = 1; k < 4; ++k) {
            if (x(i, cand[k]) > x(i, best)) {
              runner_up = x(i, best);
              best = cand[k];
            } else {
              runner_up = std::max(runner_up, x(i, cand[k]));
            }
          }
          margin_ = std::min(margin_, x(i, best) - runner_up);
          const int o = c * oh * ow + oy * ow + ox;
          out(i, o) = x(i, best);
          argmax_[i][o] = best;
        }
      }
    }
  }
  return out;
}

Mat MaxPool2::backward(const Mat& grad_out) {
  const int n = static_cast<int>(grad_out.rows());
  Mat grad_in = Mat::Zero(n, channels_ * in_height_ * in_width_);
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < grad_out.cols(); ++o) {
      grad_in(i, argmax_[i][o]) += grad_out(i, o);
    }
  }
  return grad_in;
}

double MaxPool2::kink_margin() const {
  return argmax_.empty() ? std::numeric_limits<double>::infinity() : margin_;
}

std::unique_ptr<Layer> MaxPool2::clone() const {
  return std::make_unique<MaxPool2>(channels_, in_height_, in_width_);
}

// ---- Net ---------------------------------------------------------------------

Net::Net(const Net& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Net& Net::operator=(const Net& other) {
  if (this != &other) {
    layers_.clear();
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

void Net::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

Mat Net::forward(const Mat& x) {
  Mat h = x;
  for (auto& l : layers_) h = l->forward(h);
  return h;
}

Mat Net::backward(const Mat& grad_out) {
  Mat g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
  }
  return g;
}

int Net::parameter_count() const {
  int n = 0;
  for (const auto& l : layers_) n += l->parameter_count();
  return n;
}

Vec Net::parameters() const {
  Vec p(parameter_count());
  double* dst = p.data();
  for (const auto& l : layers_) {
    l->collect_parameters(dst);
    dst += l->parameter_count();
  }
  return p;
}

void Net::set_parameters(const Vec& p) {
  if (p.size() != parameter_count()) {
    throw std::invalid_argument("Net::set_parameters: size mismatch");
  }
  const double* src = p.data();
  for (auto& l : layers_) {
    l->load_parameters(src);
    src += l->parameter_count();
  }
}

Vec Net::gradients() const {
  Vec g(parameter_count());
  double* dst = g.data();
  for (const auto& l : layers_) {
    l->collect_gradients(dst);
    dst += l->parameter_count();
  }
  return g;
}

void Net::zero_gradients() {
  for (auto& l : layers_) l->zero_gradients();
}

void Net::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

double Net::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& l : layers_) margin = std::min(margin, l->kink_margin());
  return margin;
}

std::uint64_t Net::checksum() const {
  const Vec p = parameters();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(p.size()) * sizeof(double);
       ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- softmax -------------------------------------------------------------------

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

Mat softmax_backward_rows(const Mat& probs, const Mat& grad_probs) {
  Mat out(probs.rows(), probs.cols());
  for (int i = 0; i < probs.rows(); ++i) {
    const double dot = probs.row(i).dot(grad_probs.row(i));
    out.row(i) =
        probs.row(i).array() * (grad_probs.row(i).array() - dot);
  }
  return out;
}

// ---- optimizers ------------------------------------------------------------------

void sgd_step(Net& net, double lr, double direction) {
  Vec p = net.parameters();
  p += direction * lr * net.gradients();
  net.set_parameters(p);
}

void adam_step(Net& net, AdamState& state, double lr, double direction) {
  const int n = net.parameter_count();
  if (state.m.size() != n) {
    state.m = Vec::Zero(n);
    state.v = Vec::Zero(n);
    state.t = 0;
  }
  // descend the negated objective when ascending
  const Vec g = -direction * net.gradients();
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * g;
  state.v = state.beta2 * state.v.array() + (1.0 - state.beta2) * g.array().square();
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
  Vec p = net.parameters();
  p.array() -= lr * (state.m.array() / bc1) /
               ((state.v.array() / bc2).sqrt() + state.eps);
  net.set_parameters(p);
}

}  // namespace ruda::nn
