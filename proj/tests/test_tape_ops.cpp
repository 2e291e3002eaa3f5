#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace sterf;
using testsup::fd_input_gradient;
using testsup::fd_param_gradient;
using testsup::max_abs_diff;

TEST_CASE("conv2d identity and all-ones kernel") {
  ParamStore ps;
  const int ident = ps.add("ident", {1, 1, 1, 1}, {1.0});
  std::vector<double> ones(9, 1.0);
  const int sum9 = ps.add("sum9", {1, 1, 3, 3}, ones);

  Tape tape(&ps);
  const Tensor5 x = randn(Shape5{2, 1, 1, 5, 5}, 9);
  const int in = tape.input(x);
  const int y = tape.conv2d(in, ident, 1, 0);
  REQUIRE(max_abs_diff(tape.value(y), x) == 0.0);

  // 3x3 all-ones kernel, padding 1, all-ones 3x3 input: each output counts
  // the in-bounds 3x3 window. Direct summation oracle.
  Tensor5 onesin(Shape5{1, 1, 1, 3, 3});
  onesin.fill(1.0);
  Tape t2(&ps);
  const int in2 = t2.input(onesin);
  const int y2 = t2.conv2d(in2, sum9, 1, 1);
  const Tensor5& out = t2.value(y2);
  REQUIRE(out.at(0, 0, 0, 1, 1) == 9.0);
  REQUIRE(out.at(0, 0, 0, 0, 0) == 4.0);
  REQUIRE(out.at(0, 0, 0, 0, 2) == 4.0);
  REQUIRE(out.at(0, 0, 0, 2, 0) == 4.0);
  REQUIRE(out.at(0, 0, 0, 2, 2) == 4.0);
  REQUIRE(out.at(0, 0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d shape rules and errors") {
  ParamStore ps;
  const int w = ps.add("w", {2, 3, 3, 3}, std::vector<double>(2 * 3 * 9, 0.1));
  Tape tape(&ps);
  const int in = tape.input(randn(Shape5{1, 1, 3, 8, 8}, 1));
  const int y = tape.conv2d(in, w, 2, 1);
  REQUIRE(tape.value(y).shape() == Shape5{1, 1, 2, 4, 4});

  Tape bad(&ps);
  const int in2 = bad.input(randn(Shape5{1, 1, 4, 8, 8}, 2));
  REQUIRE_THROWS_AS(bad.conv2d(in2, w, 1, 1), ShapeError);
}

TEST_CASE("conv2d gradient matches central differences") {
  ParamStore ps;
  const Tensor5 wt = randn(Shape5{1, 1, 2, 3, 9}, 4);
  std::vector<double> wdata(wt.data(), wt.data() + wt.numel());
  const int w = ps.add("w", {2, 3, 3, 3}, wdata);

  const Tensor5 x = randn(Shape5{2, 1, 3, 5, 5}, 5);
  auto build = [&](Tape& t, int in) { return t.conv2d(in, w, 1, 1); };

  Tape tape(&ps);
  const int in = tape.input(x);
  const int y = build(tape, in);
  Tensor5 stim(tape.value(y).shape());
  stim.fill(1.0);  // sum of outputs

  BackwardOptions bo;
  bo.param_grads = true;
  auto res = tape.backward_from_stimulus(y, stim, bo);
  const Tensor5 fd = fd_input_gradient(ps, build, x, stim);
  for (std::size_t i = 0; i < fd.numel(); ++i) {
    const double diff = std::fabs(res.input_adjoints[0][i] - fd[i]);
    const double mag = std::max(std::fabs(fd[i]), 1.0);
    REQUIRE(diff / mag < 1e-6);
  }

  const auto wfd = fd_param_gradient(ps, build, x, stim, w);
  const auto& wg = res.param_grads.at(w);
  for (std::size_t i = 0; i < wfd.size(); ++i)
    REQUIRE(std::fabs(wg[i] - wfd[i]) <
            1e-6 * std::max(1.0, std::fabs(wfd[i])));
}

TEST_CASE("depthwise conv: delta kernels, channel independence, grouped equivalence") {
  const std::size_t c = 2, k = 7;
  ParamStore ps;
  // Identity-center kernels: 1 at the center tap of each channel's filter.
  std::vector<double> delta(c * k * k, 0.0);
  for (std::size_t ci = 0; ci < c; ++ci) delta[ci * k * k + (k * k) / 2] = 1.0;
  const int wdelta = ps.add("delta", {c, 1, k, k}, delta);

  const Tensor5 x = randn(Shape5{1, 1, c, 9, 9}, 6);
  Tape tape(&ps);
  const int in = tape.input(x);
  const int y = tape.conv2d(in, wdelta, 1, k / 2, /*groups=*/c);
  REQUIRE(max_abs_diff(tape.value(y), x) == 0.0);

  // k=3 per-channel kernels: brute-force Jacobian has zero cross-channel
  // entries.
  ParamStore ps3;
  const Tensor5 w3t = randn(Shape5{1, 1, 1, c, 9}, 7);
  std::vector<double> w3(w3t.data(), w3t.data() + w3t.numel());
  const int wk3 = ps3.add("w", {c, 1, 3, 3}, w3);
  const Tensor5 x3 = randn(Shape5{1, 1, c, 4, 4}, 8);
  auto rows = testsup::brute_jacobian_rows(
      ps3, [&](Tape& t, int i) { return t.conv2d(i, wk3, 1, 1, c); }, x3);
  Tape t3(&ps3);
  const int i3 = t3.input(x3);
  const int y3 = t3.conv2d(i3, wk3, 1, 1, c);
  const Shape5 ys = t3.value(y3).shape();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto oidx = t3.value(y3).unravel(r);
    for (std::size_t q = 0; q < rows[r].numel(); ++q) {
      const auto iidx = x3.unravel(q);
      if (iidx[2] != oidx[2])  // different channel
        REQUIRE(rows[r][q] == 0.0);
    }
  }
  REQUIRE(ys.c == c);
}

TEST_CASE("pixelwise_linear identity, spatial delta support, 1x1-conv equivalence") {
  const std::size_t c = 3;
  ParamStore ps;
  std::vector<double> ident(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) ident[i * c + i] = 1.0;
  const int wid = ps.add("ident", {c, c}, ident);

  const Tensor5 x = randn(Shape5{2, 1, c, 4, 5}, 10);
  Tape tape(&ps);
  const int in = tape.input(x);
  REQUIRE(max_abs_diff(tape.value(tape.pixelwise_linear(in, wid)), x) == 0.0);

  // Random weights: Jacobian support is a spatial delta.
  ParamStore ps2;
  const Tensor5 wt = randn(Shape5{1, 1, 1, 2, c}, 11);
  std::vector<double> wd(wt.data(), wt.data() + wt.numel());
  const int w = ps2.add("w", {2, c}, wd);
  const Tensor5 x2 = randn(Shape5{1, 1, c, 4, 4}, 12);
  auto rows = testsup::brute_jacobian_rows(
      ps2, [&](Tape& t, int i) { return t.pixelwise_linear(i, w); }, x2);
  Tensor5 probe(Shape5{1, 1, 2, 4, 4});
  const std::size_t r = probe.index(0, 0, 1, 2, 3);
  for (std::size_t q = 0; q < rows[r].numel(); ++q) {
    const auto iidx = x2.unravel(q);
    if (iidx[3] != 2 || iidx[4] != 3) REQUIRE(rows[r][q] == 0.0);
  }

  // Same weights as a 1x1 convolution.
  std::vector<double> wconv = wd;  // (C_out, C_in) == (C_out, C_in, 1, 1)
  const int wc = ps2.add("wc", {2, c, 1, 1}, wconv);
  Tape ta(&ps2);
  const int ia = ta.input(x2);
  const Tensor5& ylin = ta.value(ta.pixelwise_linear(ia, w));
  Tape tb(&ps2);
  const int ib = tb.input(x2);
  const Tensor5& yconv = tb.value(tb.conv2d(ib, wc, 1, 0));
  REQUIRE(max_abs_diff(ylin, yconv) <= 1e-15);
}

TEST_CASE("pixelwise_linear bias and channel mismatch") {
  ParamStore ps;
  const int w = ps.add("w", {2, 3}, std::vector<double>(6, 0.0));
  const int b = ps.add("b", {2}, {1.5, -2.0});
  Tape tape(&ps);
  const int in = tape.input(randn(Shape5{1, 1, 3, 2, 2}, 13));
  const Tensor5& y = tape.value(tape.pixelwise_linear(in, w, b));
  REQUIRE(y.at(0, 0, 0, 0, 0) == 1.5);
  REQUIRE(y.at(0, 0, 1, 1, 1) == -2.0);

  Tape bad(&ps);
  const int in2 = bad.input(randn(Shape5{1, 1, 4, 2, 2}, 14));
  REQUIRE_THROWS_AS(bad.pixelwise_linear(in2, w), ShapeError);
}

TEST_CASE("batchnorm forward on constant input equals affine shift") {
  ParamStore ps;
  const int g = ps.add("g", {2}, {3.0, 0.5});
  const int b = ps.add("b", {2}, {0.25, -1.0});
  Tensor5 x(Shape5{2, 2, 2, 3, 3});
  x.fill(4.2);
  Tape tape(&ps);
  const int in = tape.input(x);
  const Tensor5& y = tape.value(tape.batchnorm(in, g, b, 1e-5));
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const auto idx = y.unravel(i);
    REQUIRE(y[i] == Catch::Approx(idx[2] == 0 ? 0.25 : -1.0).margin(1e-12));
  }
  REQUIRE_THROWS_AS(tape.batchnorm(in, g, b, 0.0), ConfigError);
  REQUIRE_THROWS_AS(tape.batchnorm(in, g, b, -1.0), ConfigError);
}

TEST_CASE("batchnorm training-mode gradient matches finite differences") {
  ParamStore ps;
  const int g = ps.add("g", {3}, {1.1, 0.9, 1.3});
  const int b = ps.add("b", {3}, {0.1, -0.2, 0.0});
  const Tensor5 x = randn(Shape5{2, 2, 3, 4, 4}, 15);
  auto build = [&](Tape& t, int i) { return t.batchnorm(i, g, b, 1e-5); };

  Tape tape(&ps);
  const int in = tape.input(x);
  const int y = build(tape, in);
  Tensor5 stim(tape.value(y).shape());
  Rng rng(16);
  for (std::size_t i = 0; i < stim.numel(); ++i) stim[i] = rng.next_normal();

  BackwardOptions bo;
  bo.param_grads = true;
  auto res = tape.backward_from_stimulus(y, stim, bo);
  const Tensor5 fd = fd_input_gradient(ps, build, x, stim);
  for (std::size_t i = 0; i < fd.numel(); ++i)
    REQUIRE(std::fabs(res.input_adjoints[0][i] - fd[i]) <=
            1e-6 * std::max(1.0, std::fabs(fd[i])));

  // gamma/beta grads too
  for (int pid : {g, b}) {
    const auto pfd = fd_param_gradient(ps, build, x, stim, pid);
    const auto& pg = res.param_grads.at(pid);
    for (std::size_t i = 0; i < pfd.size(); ++i)
      REQUIRE(std::fabs(pg[i] - pfd[i]) <=
              1e-5 * std::max(1.0, std::fabs(pfd[i])));
  }
}

TEST_CASE("batchnorm statistics pathway couples distinct positions") {
  ParamStore ps;
  const int g = ps.add("g", {1}, {1.0});
  const int b = ps.add("b", {1}, {0.0});
  const Tensor5 x = randn(Shape5{1, 1, 1, 4, 4}, 17);

  auto rows = testsup::brute_jacobian_rows(
      ps, [&](Tape& t, int i) { return t.batchnorm(i, g, b, 1e-5); }, x);
  // d y[p] / d x[q] for p != q is generically nonzero in training mode.
  std::size_t nonzero_offdiag = 0;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t q = 0; q < rows[r].numel(); ++q)
      if (r != q && std::fabs(rows[r][q]) > 1e-12) ++nonzero_offdiag;
  REQUIRE(nonzero_offdiag == rows.size() * (rows.size() - 1));

  // Frozen statistics: backward is elementwise, off-diagonals exactly 0.
  auto frozen = testsup::brute_jacobian_rows(
      ps, [&](Tape& t, int i) { return t.batchnorm(i, g, b, 1e-5, false); }, x);
  for (std::size_t r = 0; r < frozen.size(); ++r)
    for (std::size_t q = 0; q < frozen[r].numel(); ++q)
      if (r != q) REQUIRE(frozen[r][q] == 0.0);
}

TEST_CASE("elementwise ops: identities and hadamard backward") {
  ParamStore ps;
  const Tensor5 x = randn(Shape5{2, 1, 2, 3, 3}, 18);
  const Tensor5 yv = randn(Shape5{2, 1, 2, 3, 3}, 19);
  Tensor5 zeros(x.shape());

  Tape tape(&ps);
  const int in = tape.input(x);
  const int zin = tape.input(zeros);
  REQUIRE(max_abs_diff(tape.value(tape.add(in, zin)), x) == 0.0);

  const int s0 = tape.scale(in, 0.0);
  REQUIRE(testsup::max_abs(tape.value(s0)) == 0.0);
  Tensor5 stim(x.shape());
  stim.fill(1.0);
  auto res0 = tape.backward_from_stimulus(s0, stim);
  REQUIRE(testsup::max_abs(res0.input_adjoints[0]) == 0.0);

  // d(x ⊙ y)/dx = y via finite differences.
  const int yin = tape.input(yv);
  const int had = tape.hadamard(in, yin);
  auto res = tape.backward_from_stimulus(had, stim);
  REQUIRE(max_abs_diff(res.input_adjoints[0], yv) == 0.0);
  auto build = [&](Tape& t, int i) { return t.hadamard(i, t.input(yv)); };
  const Tensor5 fd = fd_input_gradient(ps, build, x, stim, 1e-5);
  for (std::size_t i = 0; i < fd.numel(); ++i)
    REQUIRE(std::fabs(res.input_adjoints[0][i] - fd[i]) <=
            1e-8 * std::max(1.0, std::fabs(fd[i])));

  Tape bad(&ps);
  const int a = bad.input(randn(Shape5{1, 1, 1, 2, 2}, 20));
  const int bnode = bad.input(randn(Shape5{1, 1, 1, 3, 3}, 21));
  REQUIRE_THROWS_AS(bad.add(a, bnode), ShapeError);
  REQUIRE_THROWS_AS(bad.hadamard(a, bnode), ShapeError);
}

TEST_CASE("backward_from_stimulus identity and rotated-kernel placement") {
  ParamStore ps;
  const Tensor5 x = randn(Shape5{3, 1, 1, 5, 5}, 22);
  Tape tape(&ps);
  const int in = tape.input(x);
  Tensor5 onehot(x.shape());
  onehot.at(1, 0, 0, 0, 0) = 1.0;
  auto res = tape.backward_from_stimulus(in, onehot);
  REQUIRE(max_abs_diff(res.input_adjoints[0], onehot) == 0.0);

  // Linear 3x3 conv, one-hot at the spatial center for all t: the input
  // gradient per timestep is the 180-degree-rotated kernel at the center.
  const Tensor5 wt = randn(Shape5{1, 1, 1, 1, 9}, 23);
  std::vector<double> wd(wt.data(), wt.data() + wt.numel());
  const int w = ps.add("w", {1, 1, 3, 3}, wd);
  Tape t2(&ps);
  const int in2 = t2.input(x);
  const int y2 = t2.conv2d(in2, w, 1, 1);
  Tensor5 stim(t2.value(y2).shape());
  for (std::size_t t = 0; t < 3; ++t) stim.at(t, 0, 0, 2, 2) = 1.0;
  auto res2 = t2.backward_from_stimulus(y2, stim);
  const Tensor5& g = res2.input_adjoints[0];
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t h = 0; h < 5; ++h)
      for (std::size_t wv = 0; wv < 5; ++wv) {
        double expect = 0.0;
        if (h >= 1 && h <= 3 && wv >= 1 && wv <= 3)
          expect = wd[(2 - (h - 1)) * 3 + (2 - (wv - 1))];
        REQUIRE(g.at(t, 0, 0, h, wv) == Catch::Approx(expect).margin(1e-15));
      }
}

TEST_CASE("adjoint linearity and one-hot aggregation") {
  ParamStore ps;
  const Tensor5 wt = randn(Shape5{1, 1, 2, 2, 9}, 24);
  std::vector<double> wd(wt.data(), wt.data() + wt.numel());
  const int w = ps.add("w", {2, 2, 3, 3}, wd);
  const int g = ps.add("g", {2}, {1.0, 1.2});
  const int b = ps.add("b", {2}, {0.0, 0.1});
  LifParams lp;

  const Tensor5 x = randn(Shape5{2, 1, 2, 6, 6}, 25);
  Tape tape(&ps);
  const int in = tape.input(x);
  int y = tape.conv2d(in, w, 1, 1);
  y = tape.batchnorm(y, g, b, 1e-5);
  y = tape.lif(y, lp);

  const Tensor5 m1 = randn(tape.value(y).shape(), 26);
  const Tensor5 m2 = randn(tape.value(y).shape(), 27);
  Tensor5 msum = m1;
  msum += m2;
  const Tensor5 g1 = tape.backward_from_stimulus(y, m1).input_adjoints[0];
  const Tensor5 g2 = tape.backward_from_stimulus(y, m2).input_adjoints[0];
  const Tensor5 gs = tape.backward_from_stimulus(y, msum).input_adjoints[0];
  Tensor5 g12 = g1;
  g12 += g2;
  REQUIRE(max_abs_diff(gs, g12) <= 1e-12);

  // Stimulus backward equals the sum of one-hot backward passes.
  Tensor5 acc(x.shape());
  for (std::size_t i = 0; i < m1.numel(); ++i) {
    if (m1[i] == 0.0) continue;
    Tensor5 onehot(m1.shape());
    onehot[i] = 1.0;
    const Tensor5 gi = tape.backward_from_stimulus(y, onehot).input_adjoints[0];
    for (std::size_t q = 0; q < acc.numel(); ++q) acc[q] += m1[i] * gi[q];
  }
  REQUIRE(max_abs_diff(acc, g1) <= 1e-12);
}

TEST_CASE("backward error paths") {
  ParamStore ps;
  Tape tape(&ps);
  const int in = tape.input(randn(Shape5{1, 1, 1, 2, 2}, 28));
  Tensor5 stim(Shape5{1, 1, 1, 2, 2});
  REQUIRE_THROWS_AS(tape.backward_from_stimulus(99, stim), ShapeError);

  Tensor5 bad(Shape5{1, 1, 1, 2, 2});
  bad[0] = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(tape.backward_from_stimulus(in, bad), NumericError);

  Tensor5 wrong(Shape5{1, 1, 1, 3, 3});
  REQUIRE_THROWS_AS(tape.backward_from_stimulus(in, wrong), ShapeError);
}

TEST_CASE("FD consistency across every differentiable primitive") {
  // One composite graph touching conv2d, dwconv, pixelwise_linear,
  // batchnorm, add, scale and hadamard, checked at (3,2,4,8,8).
  ParamStore ps;
  const std::size_t c = 4;
  const Tensor5 w1t = randn(Shape5{1, 1, c, c, 9}, 29);
  const int w1 = ps.add("w1", {c, c, 3, 3},
                        std::vector<double>(w1t.data(), w1t.data() + w1t.numel()));
  const Tensor5 wdt = randn(Shape5{1, 1, 1, c, 9}, 30);
  const int wd = ps.add("wd", {c, 1, 3, 3},
                        std::vector<double>(wdt.data(), wdt.data() + wdt.numel()));
  const Tensor5 wpt = randn(Shape5{1, 1, 1, c, c}, 31);
  const int wp = ps.add("wp", {c, c},
                        std::vector<double>(wpt.data(), wpt.data() + wpt.numel()));
  const int g = ps.add("g", {c}, std::vector<double>(c, 1.05));
  const int b = ps.add("b", {c}, std::vector<double>(c, -0.05));

  auto build = [&](Tape& t, int in) {
    int y = t.conv2d(in, w1, 1, 1);
    y = t.batchnorm(y, g, b, 1e-5);
    const int dw = t.conv2d(y, wd, 1, 1, c);
    y = t.add(y, dw);
    y = t.pixelwise_linear(y, wp);
    y = t.hadamard(y, t.scale(y, 0.5));
    return y;
  };

  const Tensor5 x = randn(Shape5{3, 2, c, 8, 8}, 32);
  Tape tape(&ps);
  const int in = tape.input(x);
  const int out = build(tape, in);
  Tensor5 stim(tape.value(out).shape());
  Rng rng(33);
  for (std::size_t i = 0; i < stim.numel(); ++i) stim[i] = rng.next_normal();
  const Tensor5 tg = tape.backward_from_stimulus(out, stim).input_adjoints[0];
  const Tensor5 fd = fd_input_gradient(ps, build, x, stim);
  for (std::size_t i = 0; i < fd.numel(); ++i)
    REQUIRE(std::fabs(tg[i] - fd[i]) <=
            1e-5 * std::max(1.0, std::fabs(fd[i])));
}

TEST_CASE("forward shapes are a pure function of op parameters") {
  // Property sweep over random conv parameter draws.
  Rng rng(34);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 1 + 2 * (rng.next_u64() % 4);       // 1,3,5,7
    const std::size_t stride = 1 + rng.next_u64() % 3;
    const std::size_t pad = rng.next_u64() % 4;
    const std::size_t cin = 1 + rng.next_u64() % 4;
    const std::size_t cout = 1 + rng.next_u64() % 4;
    const std::size_t h = k + rng.next_u64() % 10;
    const std::size_t w = k + rng.next_u64() % 10;
    ParamStore ps;
    const int wid = ps.add("w", {cout, cin, k, k},
                           std::vector<double>(cout * cin * k * k, 0.01));
    Tape tape(&ps);
    const int in = tape.input(randn(Shape5{1, 1, cin, h, w}, trial));
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const int y = tape.conv2d(in, wid, stride, pad);
    const Shape5 got = tape.value(y).shape();
    REQUIRE(got.h == (h + 2 * pad - k) / stride + 1);
    REQUIRE(got.w == (w + 2 * pad - k) / stride + 1);
    REQUIRE(got.c == cout);
    REQUIRE(got.t == 1);
  }
}
