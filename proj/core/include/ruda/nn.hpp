#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ruda/linalg.hpp"
#include "ruda/rng.hpp"

namespace ruda::nn {

// Minimal feed-forward layer stack with hand-derived backprop.  Layers cache
// whatever their backward pass needs during forward; a backward call must
// follow the forward it belongs to.  Parameter gradients ACCUMULATE across
// backward calls until zero_gradients(), so one objective can combine
// several forward/backward passes through the same net.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Mat forward(const Mat& x) = 0;
  virtual Mat backward(const Mat& grad_out) = 0;
  virtual int parameter_count() const { return 0; }
  virtual void collect_parameters(double* dst) const {}
  virtual void load_parameters(const double* src) {}
  virtual void collect_gradients(double* dst) const {}
  virtual void zero_gradients() {}
  virtual void init(Rng& rng) {}
  // distance of the last forward pass to the layer's nearest
  // non-differentiable point; infinity for smooth layers
  virtual double kink_margin() const;
  virtual std::unique_ptr<Layer> clone() const = 0;
};

// y = x W^T + b, W is (out x in)
class Linear : public Layer {
 public:
  Linear(int in_dim, int out_dim);
  Mat forward(const Mat& x) override;
  Mat backward(const Mat& grad_out) override;
  int parameter_count() const override;
  void collect_parameters(double* dst) const override;
  void load_parameters(const double* src) override;
  void collect_gradients(double* dst) const override;
  void zero_gradients() override;
  void init(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override;

  Mat weight;
  Vec bias;
  Mat grad_weight;
  Vec grad_bias;

 private:
  Mat input_;
};

class Relu : public Layer {
 public:
  Mat forward(const Mat& x) override;
  Mat backward(const Mat& grad_out) override;
  double kink_margin() const override;
  std::unique_ptr<Layer> clone() const override;

 private:
  Mat input_;
};

// Valid convolution, stride 1, square kernel, im2col backed.  Input rows are
// channel-major flattened images (c, y, x).
class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int in_height,
         int in_width);
  Mat forward(const Mat& x) override;
  Mat backward(const Mat& grad_out) override;
  int parameter_count() const override;
  void collect_parameters(double* dst) const override;
  void load_parameters(const double* src) override;
  void collect_gradients(double* dst) const override;
  void zero_gradients() override;
  void init(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override;

  int out_height() const { return in_height_ - kernel_ + 1; }
  int out_width() const { return in_width_ - kernel_ + 1; }

  Mat weight;  // out_channels x (in_channels * kernel * kernel)
  Vec bias;
  Mat grad_weight;
  Vec grad_bias;

 private:
  Mat im2col(const Vec& image) const;

  int in_channels_, out_channels_, kernel_, in_height_, in_width_;
  std::vector<Mat> cols_;  // cached per-sample im2col matrices
};

// 2x2 max pooling with stride 2 (even spatial dims required)
class MaxPool2 : public Layer {
 public:
  MaxPool2(int channels, int in_height, int in_width);
  Mat forward(const Mat& x) override;
  Mat backward(const Mat& grad_out) override;
  double kink_margin() const override;
  std::unique_ptr<Layer> clone() const override;

 private:
  int channels_, in_height_, in_width_;
  std::vector<std::vector<int>> argmax_;  // per sample, per output cell
  double margin_ = 0.0;                   // min max-vs-runner-up gap
};

class Net {
 public:
  Net() = default;
  Net(const Net& other);
  Net& operator=(const Net& other);
  Net(Net&&) = default;
  Net& operator=(Net&&) = default;

  void add(std::unique_ptr<Layer> layer);
  bool empty() const { return layers_.empty(); }

  Mat forward(const Mat& x);
  // returns gradient w.r.t. the input, accumulates parameter gradients
  Mat backward(const Mat& grad_out);

  int parameter_count() const;
  Vec parameters() const;
  void set_parameters(const Vec& p);
  Vec gradients() const;
  void zero_gradients();
  void init(Rng& rng);

  // min over layers of the last forward's kink margin; gradient-check
  // harnesses use it to reject inputs parked on a relu/pool boundary
  double kink_margin() const;

  // FNV-1a over the raw parameter bytes; used for frozen-parameter checks
  std::uint64_t checksum() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// numerically stable row-wise softmax; every entry positive, rows sum to 1
Mat softmax_rows(const Mat& logits);

// gradient w.r.t. logits given probs = softmax_rows(logits) and dL/dprobs
Mat softmax_backward_rows(const Mat& probs, const Mat& grad_probs);

// ---- optimizers ----------------------------------------------------------

// p += direction * lr * g   (direction +1 ascends, -1 descends)
void sgd_step(Net& net, double lr, double direction);

struct AdamState {
  Vec m, v;
  long t = 0;
  double beta1 = 0.5;  // GAN-style default
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(Net& net, AdamState& state, double lr, double direction);

}  // namespace ruda::nn
