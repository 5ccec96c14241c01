#include <doctest.h>

#include <cmath>

#include "parc/parc_ops.hpp"

using namespace parc;

TEST_CASE("circular conv oracle on hand cases") {
  const std::vector<float> x = {1, 2, 3, 4};
  CHECK(circular_conv_1d_oracle(x, {1, 0, 0, 0}) == x);
  CHECK(circular_conv_1d_oracle(x, {0, 1, 0, 0}) == std::vector<float>{2, 3, 4, 1});

  // constant signal times kernel sum
  const std::vector<float> c(5, 2.5f);
  std::vector<float> k = {0.5f, -1.0f, 2.0f, 0.0f, 1.5f};
  std::vector<float> y = circular_conv_1d_oracle(c, k);
  for (float v : y) CHECK(v == doctest::Approx(2.5 * 3.0));

  CHECK_THROWS_AS(circular_conv_1d_oracle(x, {1, 0}), ContractError);
}

TEST_CASE("expand functions") {
  Tensor pe = Tensor::from_f32({3}, {1, 2, 3});
  Tensor ev = expand_vertical(pe, 2);
  CHECK(ev.dims() == std::vector<std::size_t>{3, 2});
  const std::vector<float> ev_expect = {1, 1, 2, 2, 3, 3};
  for (std::size_t i = 0; i < 6; ++i) CHECK(ev.f32()[i] == ev_expect[i]);

  Tensor col = expand_vertical(pe, 1);
  CHECK(col.dims() == std::vector<std::size_t>{3, 1});
  for (std::size_t i = 0; i < 3; ++i) CHECK(col.f32()[i] == pe.f32()[i]);

  Tensor zero = expand_vertical(Tensor::zeros(Dtype::F32, {4}), 5);
  for (float v : zero.f32()) CHECK(v == 0.0f);

  Tensor pe2 = Tensor::from_f32({2}, {1, 2});
  Tensor eh = expand_horizontal(pe2, 3);
  CHECK(eh.dims() == std::vector<std::size_t>{3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(eh.f32()[i * 2] == 1.0f);
    CHECK(eh.f32()[i * 2 + 1] == 2.0f);
  }
  CHECK(expand_horizontal(pe2, 1).dims() == std::vector<std::size_t>{1, 2});
  Tensor cm = expand_horizontal(Tensor::full(Dtype::F32, {3}, 7.0), 2);
  for (float v : cm.f32()) CHECK(v == 7.0f);
}

TEST_CASE("concat implementation equals the oracle") {
  Tensor x = Tensor::from_f32({1, 1, 1, 4}, {1, 2, 3, 4});
  Tensor k = Tensor::from_f32({1, 4}, {0, 1, 0, 0});
  Tensor y = circular_conv_concat(x, k, Orientation::Horizontal);
  const std::vector<float> expect = {2, 3, 4, 1};
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.f32()[i] == expect[i]);

  // delta kernel touches a single term: bit-pattern equality
  Tensor delta = Tensor::from_f32({1, 4}, {1, 0, 0, 0});
  CHECK(bit_equal(circular_conv_concat(x, delta, Orientation::Horizontal), x));

  Rng rng(51);
  double worst = 0.0;
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.uniform_int(64);
    const std::size_t c = 1 + rng.uniform_int(3);
    const Orientation o = rng.uniform_int(2) ? Orientation::Horizontal : Orientation::Vertical;
    const std::size_t h = o == Orientation::Vertical ? n : 1 + rng.uniform_int(5);
    const std::size_t w = o == Orientation::Vertical ? 1 + rng.uniform_int(5) : n;
    Tensor xx = rng.uniform_tensor(Dtype::F32, {1, c, h, w}, -1, 1);
    Tensor kk = rng.uniform_tensor(Dtype::F32, {c, n}, -1, 1);
    worst = std::max(worst, max_rel_err(circular_conv_concat(xx, kk, o),
                                        circular_conv_direct(xx, kk, o)));
  }
  CHECK(worst < 1e-6);

  CHECK_THROWS_AS(circular_conv_concat(x, Tensor::zeros(Dtype::F32, {1, 3}),
                                       Orientation::Horizontal),
                  ContractError);
}

TEST_CASE("parc_forward with delta kernel and no PE is the identity") {
  Rng rng(53);
  const std::size_t c = 3, h = 6, w = 4;
  ParCParams p;
  p.orientation = Orientation::Vertical;
  p.base_kernel = Tensor::zeros(Dtype::F32, {c, h});
  for (std::size_t ci = 0; ci < c; ++ci) p.base_kernel.f32_mut()[ci * h] = 1.0f;
  Tensor x = rng.uniform_tensor(Dtype::F32, {2, c, h, w}, -1, 1);
  CHECK(bit_equal(parc_forward(x, p, false), x));
}

TEST_CASE("parc_forward passes a constant PE through a delta kernel") {
  Rng rng(57);
  const std::size_t c = 2, h = 4, w = 5;
  ParCParams p;
  p.orientation = Orientation::Horizontal;
  p.base_kernel = Tensor::zeros(Dtype::F32, {c, w});
  for (std::size_t ci = 0; ci < c; ++ci) p.base_kernel.f32_mut()[ci * w] = 1.0f;
  const double pe_value = 0.625;
  p.base_pe = Tensor::full(Dtype::F32, {c, w}, pe_value);
  Tensor x = rng.uniform_tensor(Dtype::F32, {1, c, h, w}, -1, 1);
  Tensor y = parc_forward(x, p, true);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y.f32()[i] == doctest::Approx(x.f32()[i] + pe_value));
  }
}

TEST_CASE("parc_forward interpolates the base kernel to the runtime extent") {
  // affine base of length 4 resized to 8 has a hand-computable closed form
  const std::size_t c = 1, h = 8, w = 3;
  ParCParams p;
  p.orientation = Orientation::Vertical;
  p.base_kernel = Tensor::from_f32({c, 4}, {1, 2, 3, 4});
  Rng rng(59);
  Tensor x = rng.uniform_tensor(Dtype::F32, {1, c, h, w}, -1, 1);

  Tensor inst = instance_kernel(p, h);
  for (std::size_t i = 0; i < h; ++i) {
    const double expect = 1.0 + 3.0 * static_cast<double>(i) / 7.0;
    CHECK(inst.f32()[i] == doctest::Approx(expect).epsilon(1e-6));
  }

  // full op must equal the oracle run with the interpolated kernel
  Tensor y = parc_forward(x, p, false);
  CHECK(max_rel_err(y, circular_conv_direct(x, inst, Orientation::Vertical)) == 0.0);
}

TEST_CASE("dynamic sizing accepts any extent; matched extent is bit-exact") {
  Rng rng(61);
  const std::size_t c = 2;
  ParCParams p;
  p.orientation = Orientation::Vertical;
  p.base_kernel = rng.uniform_tensor(Dtype::F32, {c, 6}, -1, 1);
  p.base_pe = rng.uniform_tensor(Dtype::F32, {c, 6}, -1, 1);
  for (std::size_t h : {1ul, 2ul, 5ul, 6ul, 9ul, 17ul}) {
    Tensor x = rng.uniform_tensor(Dtype::F32, {1, c, h, 3}, -1, 1);
    Tensor y = parc_forward(x, p, true);
    CHECK(y.dims() == x.dims());
  }
  CHECK(bit_equal(instance_kernel(p, 6), p.base_kernel));
  CHECK(bit_equal(instance_pe(p, 6), p.base_pe));
}

TEST_CASE("parc parameter count is 2 * C * L_base") {
  ParCParams p;
  p.base_kernel = Tensor::zeros(Dtype::F32, {4, 7});
  p.base_pe = Tensor::zeros(Dtype::F32, {4, 7});
  CHECK(p.base_kernel.size() + p.base_pe.size() == 2 * 4 * 7);
  CHECK(p.channels() == 4);
  CHECK(p.l_base() == 7);
}

TEST_CASE("big kernel conv matches zero-padded direct summation") {
  ParCParams p;
  p.orientation = Orientation::Horizontal;
  p.base_kernel = Tensor::from_f32({1, 3}, {1, 1, 1});
  Tensor x = Tensor::from_f32({1, 1, 1, 4}, {1, 2, 3, 4});

  // fraction 1/2 of extent 4 rounds to 2 and is forced odd to 3
  CHECK(big_kernel_length(0.5, 4) == 3);
  Tensor y = big_kernel_conv(x, 0.5, p);
  const std::vector<float> expect = {3, 6, 9, 7};
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.f32()[i] == doctest::Approx(expect[i]));

  // contrast: the wrap-around 3-tap circular kernel {t=0,1,n-1} gives [7,6,9,8]
  Tensor kc = Tensor::from_f32({1, 4}, {1, 1, 0, 1});
  Tensor yc = circular_conv_direct(x, kc, Orientation::Horizontal);
  const std::vector<float> expect_c = {7, 6, 9, 8};
  for (std::size_t i = 0; i < 4; ++i) CHECK(yc.f32()[i] == doctest::Approx(expect_c[i]));
}

TEST_CASE("big kernel of length one is the identity") {
  ParCParams p;
  p.orientation = Orientation::Vertical;
  p.base_kernel = Tensor::from_f32({2, 1}, {1, 1});
  Rng rng(67);
  Tensor x = rng.uniform_tensor(Dtype::F32, {1, 2, 4, 3}, -1, 1);
  CHECK(big_kernel_length(0.25, 4) == 1);
  CHECK(bit_equal(big_kernel_conv(x, 0.25, p), x));
}

TEST_CASE("big kernel length arithmetic and errors") {
  CHECK(big_kernel_length(0.5, 16) == 9);   // round(8) forced odd
  CHECK(big_kernel_length(0.25, 16) == 5);  // round(4) forced odd
  CHECK_THROWS_AS(big_kernel_length(0.25, 1), ArgumentError);
  CHECK_THROWS_AS(big_kernel_length(0.0, 8), ArgumentError);
  CHECK_THROWS_AS(big_kernel_length(1.5, 8), ArgumentError);
}

TEST_CASE("zero-padded big kernel output is local") {
  // with kernel length < n, output 0 cannot see input n-1
  const std::size_t n = 8;
  ParCParams p;
  p.orientation = Orientation::Horizontal;
  p.base_kernel = Tensor::from_f32({1, 3}, {1, 1, 1});
  Tensor x = Tensor::zeros(Dtype::F32, {1, 1, 1, n});
  Tensor base = big_kernel_conv(x, 0.5, p);  // kernel length 5
  Tensor x2 = x;
  x2.f32_mut()[n - 1] = 100.0f;
  Tensor bumped = big_kernel_conv(x2, 0.5, p);
  CHECK(base.f32()[0] == bumped.f32()[0]);
  CHECK(base.f32()[n - 1] != bumped.f32()[n - 1]);
}

TEST_CASE("ParC-V reaches every row of its column and no other column") {
  Rng rng(71);
  const std::size_t h = 6, w = 4;
  ParCParams p;
  p.orientation = Orientation::Vertical;
  p.base_kernel = rng.uniform_tensor(Dtype::F32, {1, h}, 0.5, 1.5);  // all nonzero
  Tensor x = rng.uniform_tensor(Dtype::F32, {1, 1, h, w}, -1, 1);
  Tensor y0 = parc_forward(x, p, false);
  const std::size_t probe_col = 2;
  for (std::size_t r = 0; r < h; ++r) {
    Tensor xp = x;
    xp.f32_mut()[r * w + probe_col] += 1.0f;
    Tensor y1 = parc_forward(xp, p, false);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const bool changed = y0.f32()[i * w + j] != y1.f32()[i * w + j];
        if (j == probe_col) {
          CHECK(changed);  // all-nonzero kernel: every row of the column reacts
        } else {
          CHECK(!changed);
        }
      }
    }
  }
}

TEST_CASE("channel mismatch raises a contract error") {
  ParCParams p;
  p.orientation = Orientation::Vertical;
  p.base_kernel = Tensor::zeros(Dtype::F32, {3, 4});
  Tensor x = Tensor::zeros(Dtype::F32, {1, 2, 4, 4});
  CHECK_THROWS_AS(parc_forward(x, p, false), ContractError);
}
