#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ruda/nn.hpp"
#include "testutil.hpp"

using namespace ruda;
using testutil::central_diff;
using testutil::rel_error;

namespace {

// finite differences of sum(net(x)) with respect to the net parameters
Vec fd_param_grad(nn::Net& net, const Mat& x) {
  return central_diff(
      [&](const Vec& p) {
        net.set_parameters(p);
        return net.forward(x).sum();
      },
      net.parameters());
}

Vec analytic_param_grad(nn::Net& net, const Mat& x) {
  net.zero_gradients();
  const Mat y = net.forward(x);
  net.backward(Mat::Ones(y.rows(), y.cols()));
  return net.gradients();
}

}  // namespace

TEST_CASE("linear layer gradients") {
  Rng rng(3);
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(4, 3));
  net.init(rng);
  const Mat x = testutil::random_inputs(5, 4, rng);

  const Vec analytic = analytic_param_grad(net, x);
  const Vec p0 = net.parameters();
  const Vec fd = fd_param_grad(net, x);
  net.set_parameters(p0);
  CHECK(rel_error(analytic, fd) < 1e-6);

  // input gradient
  net.zero_gradients();
  const Mat y = net.forward(x);
  const Mat gx = net.backward(Mat::Ones(y.rows(), y.cols()));
  const Vec fd_x = central_diff(
      [&](const Vec& xv) {
        return net.forward(testutil::unflatten(xv, 5, 4)).sum();
      },
      testutil::flatten(x));
  CHECK(rel_error(testutil::flatten(gx), fd_x) < 1e-6);
}

TEST_CASE("mlp with relu gradients") {
  Rng rng(17);
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(3, 6));
  net.add(std::make_unique<nn::Relu>());
  net.add(std::make_unique<nn::Linear>(6, 2));
  net.init(rng);
  const Mat x = testutil::random_inputs(4, 3, rng);

  const Vec analytic = analytic_param_grad(net, x);
  const Vec p0 = net.parameters();
  const Vec fd = fd_param_grad(net, x);
  net.set_parameters(p0);
  CHECK(rel_error(analytic, fd) < 1e-5);
}

TEST_CASE("conv + pool gradients") {
  Rng rng(23);
  nn::Net net;
  net.add(std::make_unique<nn::Conv2d>(1, 2, 3, 8, 8));
  net.add(std::make_unique<nn::MaxPool2>(2, 6, 6));
  net.add(std::make_unique<nn::Linear>(2 * 3 * 3, 2));
  net.init(rng);
  const Mat x = testutil::random_inputs(3, 64, rng);

  const Vec analytic = analytic_param_grad(net, x);
  const Vec p0 = net.parameters();
  const Vec fd = fd_param_grad(net, x);
  net.set_parameters(p0);
  CHECK(rel_error(analytic, fd) < 1e-5);

  // input gradient through the whole stack
  net.zero_gradients();
  const Mat y = net.forward(x);
  const Mat gx = net.backward(Mat::Ones(y.rows(), y.cols()));
  const Vec fd_x = central_diff(
      [&](const Vec& xv) {
        return net.forward(testutil::unflatten(xv, 3, 64)).sum();
      },
      testutil::flatten(x));
  CHECK(rel_error(testutil::flatten(gx), fd_x) < 1e-5);
}

TEST_CASE("gradient accumulation across backward calls") {
  Rng rng(5);
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(3, 2));
  net.init(rng);
  const Mat x1 = testutil::random_inputs(2, 3, rng);
  const Mat x2 = testutil::random_inputs(2, 3, rng);

  net.zero_gradients();
  Mat y = net.forward(x1);
  net.backward(Mat::Ones(y.rows(), y.cols()));
  y = net.forward(x2);
  net.backward(Mat::Ones(y.rows(), y.cols()));
  const Vec both = net.gradients();

  net.zero_gradients();
  y = net.forward(x1);
  net.backward(Mat::Ones(y.rows(), y.cols()));
  const Vec first = net.gradients();
  net.zero_gradients();
  y = net.forward(x2);
  net.backward(Mat::Ones(y.rows(), y.cols()));
  const Vec second = net.gradients();

  CHECK((both - first - second).norm() < 1e-12);
}

TEST_CASE("softmax rows") {
  Rng rng(9);
  const Mat logits = testutil::random_inputs(6, 4, rng, 3.0);
  const Mat probs = nn::softmax_rows(logits);
  for (int i = 0; i < probs.rows(); ++i) {
    CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (int j = 0; j < probs.cols(); ++j) CHECK(probs(i, j) > 0.0);
  }
  // stability under large logits
  Mat big(1, 3);
  big << 1000.0, 999.0, -1000.0;
  CHECK(nn::softmax_rows(big).allFinite());

  // backward against finite differences on a scalar readout
  Mat readout = testutil::random_inputs(6, 4, rng);
  const Mat grad_logits = nn::softmax_backward_rows(
      probs, readout);
  const Vec fd = central_diff(
      [&](const Vec& lv) {
        const Mat l = testutil::unflatten(lv, 6, 4);
        return (nn::softmax_rows(l).array() * readout.array()).sum();
      },
      testutil::flatten(logits));
  CHECK(rel_error(testutil::flatten(grad_logits), fd) < 1e-6);
}

TEST_CASE("net copy is deep and checksums track parameters") {
  Rng rng(13);
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(3, 3));
  net.init(rng);
  nn::Net copy = net;
  CHECK(copy.checksum() == net.checksum());

  Vec p = copy.parameters();
  p(0) += 1.0;
  copy.set_parameters(p);
  CHECK(copy.checksum() != net.checksum());
  CHECK(net.parameters()(0) != copy.parameters()(0));
}

TEST_CASE("optimizers move parameters the right way") {
  // one-parameter quadratic: maximize -(p-3)^2 via ascent on its gradient
  nn::Net net;
  net.add(std::make_unique<nn::Linear>(1, 1));
  Vec p(2);
  p << 0.0, 0.0;  // weight, bias
  net.set_parameters(p);

  nn::AdamState adam;
  for (int i = 0; i < 500; ++i) {
    net.zero_gradients();
    const double w = net.parameters()(0);
    // d/dw of -(w-3)^2 = -2(w-3); inject as if backprop produced it
    Mat x(1, 1);
    x << 1.0;
    net.forward(x);
    Mat g(1, 1);
    g << -2.0 * (w - 3.0);
    net.backward(g);  // grad_weight = g * x = -2(w-3)
    nn::adam_step(net, adam, 0.05, +1.0);
  }
  CHECK(net.parameters()(0) == doctest::Approx(3.0).epsilon(1e-2));

  nn::Net net2;
  net2.add(std::make_unique<nn::Linear>(1, 1));
  net2.set_parameters(p);
  for (int i = 0; i < 200; ++i) {
    net2.zero_gradients();
    const double w = net2.parameters()(0);
    Mat x(1, 1);
    x << 1.0;
    net2.forward(x);
    Mat g(1, 1);
    g << -2.0 * (w - 3.0);
    net2.backward(g);
    nn::sgd_step(net2, 0.1, +1.0);
  }
  CHECK(net2.parameters()(0) == doctest::Approx(3.0).epsilon(1e-3));
}
