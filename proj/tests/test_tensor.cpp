#include <cmath>
#include <cstdio>
#include <filesystem>

#include "core/adam.hpp"
#include "core/weights_io.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace rfe;
using test::check_grads_fd;
using test::random_tensor;

namespace {

// Nested-loop cross-correlation used as the independent oracle for conv2d.
Tensor conv_oracle(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad) {
  std::size_t ci = x.shape[0], h = x.shape[1], w = x.shape[2];
  std::size_t co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({co, oh, ow});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = bias.size() ? bias[o] : 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              long iy = static_cast<long>(oy) * stride + static_cast<long>(ky) - pad;
              long ix = static_cast<long>(ox) * stride + static_cast<long>(kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
                continue;
              }
              acc += x[(c * h + iy) * w + ix] * k[((o * ci + c) * kh + ky) * kw + kx];
            }
        out[(o * oh + oy) * ow + ox] = acc;
      }
  return out;
}

Tensor maxpool_oracle(const Tensor& x, int window, int stride) {
  std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor out({c, oh, ow});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -1e300;
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx) {
            best = std::max(best, x[(ci * h + oy * stride + ky) * w + ox * stride + kx]);
          }
        out[(ci * oh + oy) * ow + ox] = best;
      }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed product") {
  Tape t;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Rng rng(7);
  Tensor b = random_tensor({3, 4}, rng);
  Value out = t.matmul(t.constant(eye), t.constant(b));
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(t.value(out)[i] == doctest::Approx(b[i]));

  Value prod = t.matmul(t.constant(Tensor({2, 2}, {1, 2, 3, 4})),
                        t.constant(Tensor({2, 1}, {1, 1})));
  CHECK(t.value(prod)[0] == doctest::Approx(3.0));
  CHECK(t.value(prod)[1] == doctest::Approx(7.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Value a = t.constant(Tensor({2, 3}));
  Value b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("matmul gradients vs central finite differences") {
  Rng rng(11);
  Parameter a(random_tensor({4, 5}, rng));
  Parameter b(random_tensor({5, 3}, rng));
  Tensor w = random_tensor({4, 3}, rng);
  auto build = [&](Tape& t) {
    // weighted sum keeps the loss scalar while exercising every output
    return t.mse_sum(t.reshape(t.mul(t.matmul(t.param(a), t.param(b)), t.constant(w)), {12}),
                     t.constant(Tensor({12})));
  };
  auto rep = check_grads_fd(build, {&a, &b});
  CHECK(rep.checked == 35);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("conv2d identity kernel passes input through") {
  Tape t;
  Rng rng(3);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tensor k({1, 1, 1, 1}, {1.0});
  Value out = t.conv2d(t.constant(x), t.constant(k), 1, 0);
  CHECK(t.value(out).shape == Shape{1, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(t.value(out)[i] == x[i]);
}

TEST_CASE("conv2d hand-computed sum") {
  Tape t;
  Value out = t.conv2d(t.constant(Tensor({1, 2, 2}, {1, 2, 3, 4})),
                       t.constant(Tensor({1, 1, 2, 2}, {1, 1, 1, 1})), 1, 0);
  CHECK(t.value(out).shape == Shape{1, 1, 1});
  CHECK(t.value(out)[0] == doctest::Approx(10.0));
}

TEST_CASE("conv2d kernel larger than padded input") {
  Tape t;
  Value x = t.constant(Tensor({1, 2, 2}));
  Value k = t.constant(Tensor({1, 1, 5, 5}));
  CHECK_THROWS_AS(t.conv2d(x, k, 1, 0), DimensionError);
}

TEST_CASE("conv2d values and gradients vs nested-loop oracle") {
  Rng rng(19);
  Parameter x(random_tensor({3, 8, 8}, rng));
  Parameter k(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  Parameter bias(random_tensor({4}, rng));
  Tensor w = random_tensor({4, 4, 4}, rng);

  Tape t;
  Value out = t.conv2d(t.param(x), t.param(k), t.param(bias), 2, 1);
  CHECK(t.value(out).shape == Shape{4, 4, 4});
  Tensor expect = conv_oracle(x.value, k.value, bias.value, 2, 1);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(t.value(out)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  auto build = [&](Tape& tp) {
    Value o = tp.conv2d(tp.param(x), tp.param(k), tp.param(bias), 2, 1);
    return tp.mse_sum(tp.reshape(tp.mul(o, tp.constant(w)), {64}), tp.constant(Tensor({64})));
  };
  auto rep = check_grads_fd(build, {&x, &k, &bias});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("maxpool2d constant input and hand case") {
  Tape t;
  Value c = t.maxpool2d(t.constant(Tensor::full({1, 4, 4}, 2.5)), 2, 2);
  for (double v : t.value(c).data) CHECK(v == 2.5);

  Value m = t.maxpool2d(t.constant(Tensor({1, 2, 2}, {1, 2, 3, 4})), 2, 2);
  CHECK(t.value(m).shape == Shape{1, 1, 1});
  CHECK(t.value(m)[0] == 4.0);

  CHECK_THROWS_AS(t.maxpool2d(t.constant(Tensor({1, 2, 2})), 3, 1), DimensionError);
}

TEST_CASE("maxpool2d output and gradient routing vs oracle") {
  Rng rng(23);
  Parameter x(random_tensor({2, 6, 6}, rng));
  Tensor w = random_tensor({2, 3, 3}, rng);
  Tape t;
  Value out = t.maxpool2d(t.param(x), 2, 2);
  Tensor expect = maxpool_oracle(x.value, 2, 2);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(t.value(out)[i] == expect[i]);

  auto build = [&](Tape& tp) {
    Value o = tp.maxpool2d(tp.param(x), 2, 2);
    return tp.mse_sum(tp.reshape(tp.mul(o, tp.constant(w)), {18}), tp.constant(Tensor({18})));
  };
  auto rep = check_grads_fd(build, {&x});
  CHECK(rep.max_rel_err < 1e-5);

  // Only one element per window may carry gradient.
  x.zero_grad();
  Tape t2;
  t2.backward(build(t2));
  std::size_t nonzero = 0;
  for (double g : x.grad.data) nonzero += g != 0.0;
  CHECK(nonzero <= 18);
}

TEST_CASE("maxpool2d ties route to first element in row-major order") {
  Parameter x(Tensor::full({1, 2, 2}, 1.0));
  Tape t;
  Value o = t.maxpool2d(t.param(x), 2, 2);
  t.backward(t.mse_sum(t.reshape(o, {1}), t.constant(Tensor({1}, {-1.0}))));
  CHECK(x.grad[0] != 0.0);
  CHECK(x.grad[1] == 0.0);
  CHECK(x.grad[2] == 0.0);
  CHECK(x.grad[3] == 0.0);
}

TEST_CASE("elementwise basics") {
  Tape t;
  Value s = t.sigmoid(t.constant(Tensor({3})));
  for (double v : t.value(s).data) CHECK(v == doctest::Approx(0.5));

  Rng rng(5);
  Tensor xv = random_tensor({7}, rng);
  Value m = t.mul(t.constant(xv), t.constant(Tensor::full({7}, 1.0)));
  for (std::size_t i = 0; i < 7; ++i) CHECK(t.value(m)[i] == xv[i]);

  CHECK_THROWS_AS(t.add(t.constant(Tensor({2})), t.constant(Tensor({3}))), DimensionError);
}

TEST_CASE("relu gradient vs finite differences away from zero") {
  Rng rng(29);
  Parameter x(random_tensor({20}, rng));
  Tensor w = random_tensor({20}, rng);
  auto build = [&](Tape& tp) {
    return tp.mse_sum(tp.mul(tp.relu(tp.param(x)), tp.constant(w)), tp.constant(Tensor({20})));
  };
  auto skip = [](const Parameter& p, std::size_t i) { return std::abs(p.value[i]) <= 1e-3; };
  auto rep = check_grads_fd(build, {&x}, 1e-5, skip);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("masked softmax cross entropy analytic cases") {
  Tape t;
  // four equal unmasked logits -> ln 4 regardless of target
  Value u = t.masked_softmax_cross_entropy(t.constant(Tensor::full({6, }, 1.7)), 2,
                                           {1, 0, 0, 0, 1, 0});
  CHECK(t.value(u).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Value v = t.masked_softmax_cross_entropy(t.constant(Tensor({2}, {10.0, -10.0})), 0);
  CHECK(t.value(v).item() == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
  CHECK(t.value(v).item() == doctest::Approx(2.061e-9).epsilon(1e-3));
}

TEST_CASE("masked softmax cross entropy error cases") {
  Tape t;
  Value z = t.constant(Tensor({4}, {1, 2, 3, 4}));
  CHECK_THROWS_WITH_AS(t.masked_softmax_cross_entropy(z, 1, {0, 1, 0, 0}),
                       doctest::Contains("masked"), InvalidArgument);
  CHECK_THROWS_WITH_AS(t.masked_softmax_cross_entropy(z, 1, {1, 1, 1, 1}),
                       doctest::Contains("masked"), InvalidArgument);
}

TEST_CASE("masked softmax cross entropy vs subvector oracle") {
  Rng rng(31);
  Parameter z(random_tensor({10}, rng, -3.0, 3.0));
  std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 0, 1, 1, 0};
  std::size_t target = 4;

  Tape t;
  Value loss = t.masked_softmax_cross_entropy(t.param(z), target, mask);
  t.backward(loss);

  // oracle: softmax over the extracted 4-element subvector
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) keep.push_back(i);
  }
  double mx = -1e300;
  for (std::size_t i : keep) mx = std::max(mx, z.value[i]);
  double sum = 0.0;
  for (std::size_t i : keep) sum += std::exp(z.value[i] - mx);
  double expect = std::log(sum) + mx - z.value[target];
  CHECK(t.value(loss).item() == doctest::Approx(expect).epsilon(1e-12));

  double psum = 0.0;
  for (std::size_t i : keep) {
    double p = std::exp(z.value[i] - mx) / sum;
    psum += p;
    double g = p - (i == target ? 1.0 : 0.0);
    CHECK(z.grad[i] == doctest::Approx(g).epsilon(1e-10));
  }
  CHECK(std::abs(psum - 1.0) < 1e-12);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) CHECK(z.grad[i] == 0.0);  // exactly zero
  }

  auto build = [&](Tape& tp) {
    return tp.masked_softmax_cross_entropy(tp.param(z), target, mask);
  };
  CHECK(check_grads_fd(build, {&z}).max_rel_err < 1e-4);
}

TEST_CASE("mse_sum analytic and batch oracle") {
  Tape t;
  Rng rng(37);
  Tensor a = random_tensor({9}, rng);
  CHECK(t.value(t.mse_sum(t.constant(a), t.constant(a))).item() == 0.0);

  Tensor u({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor v({4}, {1.5, 2.5, 3.5, 4.5});
  CHECK(t.value(t.mse_sum(t.constant(u), t.constant(v))).item() == doctest::Approx(1.0));

  Tensor ba = random_tensor({8, 16}, rng);
  Tensor bb = random_tensor({8, 16}, rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < ba.size(); ++i) expect += (ba[i] - bb[i]) * (ba[i] - bb[i]);
  expect /= 8.0;
  CHECK(t.value(t.mse_sum(t.constant(ba), t.constant(bb))).item() ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Tensor p({3}, {1.0, -2.0, 0.5});
  Tensor before = p;
  AdamState st(p.shape, 0.1);
  adam_step(p, Tensor::zeros({3}), st, "p");
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p[i] == before[i]);
    CHECK(st.m[i] == 0.0);
    CHECK(st.v[i] == 0.0);
  }
  CHECK(st.step == 1);
}

TEST_CASE("adam first step collapses to -lr*sign(g)") {
  Tensor p({1}, {3.0});
  AdamState st(p.shape, 0.1);
  adam_step(p, Tensor({1}, {2.0}), st, "p");
  CHECK(p[0] == doctest::Approx(3.0 - 0.1).epsilon(1e-7));
}

TEST_CASE("adam five steps on f(w)=w^2 vs hand-stepped reference") {
  // reference computed independently with the textbook update
  double w_ref = 1.0, m = 0.0, v = 0.0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> trajectory;
  for (int s = 1; s <= 5; ++s) {
    double g = 2.0 * w_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, s));
    double vh = v / (1 - std::pow(b2, s));
    w_ref -= lr * mh / (std::sqrt(vh) + eps);
    trajectory.push_back(w_ref);
  }

  Parameter w(Tensor({1}, {1.0}));
  w.name = "w";
  AdamOptimizer opt({&w}, lr);
  for (int s = 0; s < 5; ++s) {
    opt.zero_grad();
    Tape t;
    Value loss = t.mse_sum(t.param(w), t.constant(Tensor({1})));
    t.backward(loss);
    opt.step();
    CHECK(w.value[0] == doctest::Approx(trajectory[s]).epsilon(1e-12));
  }
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  Tensor p({1}, {1.0});
  AdamState st(p.shape, 0.1);
  Tensor g({1}, {std::nan("")});
  CHECK_THROWS_WITH_AS(adam_step(p, g, st, "conv1.weight"), doctest::Contains("conv1.weight"),
                       DivergenceError);
}

TEST_CASE("gradient linearity: backward of a sum equals summed backwards") {
  Rng rng(41);
  Parameter x(random_tensor({6}, rng));
  Tensor t1 = random_tensor({6}, rng);
  Tensor t2 = random_tensor({6}, rng);

  x.zero_grad();
  {
    Tape t;
    Value a = t.mse_sum(t.sigmoid(t.param(x)), t.constant(t1));
    Value b = t.mse_sum(t.relu(t.param(x)), t.constant(t2));
    t.backward(t.add(a, b));
  }
  Tensor sum_grad = x.grad;

  x.zero_grad();
  {
    Tape t;
    t.backward(t.mse_sum(t.sigmoid(t.param(x)), t.constant(t1)));
    t.backward(t.mse_sum(t.relu(t.param(x)), t.constant(t2)));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(x.grad[i] == doctest::Approx(sum_grad[i]).epsilon(1e-12));
  }
}

TEST_CASE("same graph twice with same seed is bit-identical") {
  auto run = [] {
    Rng rng(97);
    Parameter a(random_tensor({5, 5}, rng));
    Parameter b(random_tensor({5, 5}, rng));
    Tape t;
    Value out = t.sigmoid(t.matmul(t.param(a), t.param(b)));
    Value loss = t.mse_sum(t.reshape(out, {25}), t.constant(Tensor({25})));
    t.backward(loss);
    std::vector<double> bits = a.grad.data;
    bits.push_back(t.value(loss).item());
    return bits;
  };
  CHECK(run() == run());
}

TEST_CASE("constant leaves carry no gradient after backward") {
  Tape t;
  Value c = t.constant(Tensor({3}, {1, 2, 3}));
  Value loss = t.mse_sum(c, t.constant(Tensor({3})));
  t.backward(loss);
  CHECK_FALSE(t.has_grad(c));
  CHECK_THROWS_AS(t.grad(c), InvalidArgument);
}

TEST_CASE("weight container round trip is bit-exact") {
  Rng rng(53);
  std::vector<NamedTensor> ts;
  ts.push_back({"f.layer0.weight", random_tensor({7, 3}, rng)});
  ts.push_back({"w.task1.bias", random_tensor({4}, rng)});
  ts.push_back({"r.task2.aux.conv1.weight", random_tensor({2, 3, 3, 3}, rng)});
  ts[0].tensor[0] = 0.1 + 0.2;  // not exactly representable; survives round trip

  auto path = std::filesystem::temp_directory_path() / "rfe_weights_test.rfew";
  save_weights(path.string(), ts);
  auto back = load_weights(path.string());
  REQUIRE(back.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].name == ts[i].name);
    CHECK(back[i].tensor.shape == ts[i].tensor.shape);
    CHECK(back[i].tensor.data == ts[i].tensor.data);
  }
  std::filesystem::remove(path);
}

TEST_CASE("weight container rejects bad magic") {
  auto path = std::filesystem::temp_directory_path() / "rfe_badmagic.rfew";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    std::fputs("NOPE!", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_weights(path.string()), ParseError);
  std::filesystem::remove(path);
}
