#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sslct/encoder.hpp"
#include "sslct/gradcheck.hpp"

using namespace sslct;

namespace {

EncoderConfig toy_config() {
  EncoderConfig ec;
  ec.blocks = {1, 1, 1, 1};
  ec.widths = {8, 16, 32, 64};
  return ec;
}

template <typename T>
Ptr<T> random_image(int n, int h, int w, std::uint64_t seed) {
  auto x = make_node<T>({n, 1, h, w});
  auto rng = make_rng(seed, "test_image");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : x->value) v = (T)u(rng);
  return x;
}

}  // namespace

TEST_CASE("mul_mask zeroes inactive positions and gates gradients") {
  auto x = make_node<float>({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  MaskGrid g = all_active_grid(1, 2, 2);
  g.a = {1, 0, 0, 1};
  auto y = mul_mask(x, g);
  CHECK(y->value == std::vector<float>{1, 0, 0, 4, 5, 0, 0, 8});
  auto loss = sum(y);
  backward(loss);
  CHECK(x->grad == std::vector<float>{1, 0, 0, 1, 1, 0, 0, 1});
}

TEST_CASE("stride_mask samples the center-mapped input position") {
  MaskGrid in = all_active_grid(1, 4, 4);
  in.a = {1, 0, 0, 0,
          0, 0, 1, 0,
          0, 0, 0, 0,
          0, 0, 1, 1};
  MaskGrid out = stride_mask(in, 2, 2, 2);
  CHECK(out.at(0, 0, 0) == true);   // input (0,0)
  CHECK(out.at(0, 0, 1) == false);  // input (0,2)
  CHECK(out.at(0, 1, 0) == false);  // input (2,0)
  CHECK(out.at(0, 1, 1) == false);  // input (2,2)
}

TEST_CASE("submanifold conv with all-active mask equals dense conv") {
  auto x = random_image<float>(2, 8, 8, 11);
  auto rng = make_rng(12, "w");
  auto w = kaiming_init<float>({3, 1, 3, 3}, 9, rng);
  SparseFeatureMap<float> sm{x, all_active_grid(2, 8, 8)};
  auto sparse = submanifold_conv2d(sm, w, Ptr<float>{}, 1, 1);
  auto dense = conv2d(x, w, Ptr<float>{}, 1, 1);
  for (size_t i = 0; i < dense->value.size(); ++i)
    CHECK(sparse.values->value[i] == doctest::Approx(dense->value[i]).epsilon(1e-6));
}

TEST_CASE("stride-1 submanifold conv preserves the active set bit-exactly") {
  PatchMask pm = generate_patch_mask(16, 16, 4, 0.6, 77);
  MaskGrid g = downsample_masks({pm}, 1, 16, 16);
  auto x = mul_mask(random_image<float>(1, 16, 16, 5), g);
  auto rng = make_rng(6, "w");
  auto w = kaiming_init<float>({2, 1, 3, 3}, 9, rng);
  SparseFeatureMap<float> sm{x, g};
  auto out = submanifold_conv2d(sm, w, Ptr<float>{}, 1, 1);
  CHECK(out.active.a == g.a);
  // Inactive storage is exactly zero.
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16 * 16; ++i)
      if (!g.a[i]) CHECK(out.values->value[(size_t)c * 256 + i] == 0.0f);
}

TEST_CASE("sparse encoder matches dense encoder under an all-kept mask") {
  auto enc = Encoder<float>(toy_config(), 42);
  auto x = random_image<float>(2, 32, 32, 21);
  std::vector<PatchMask> masks{all_kept_mask(32, 32, 8), all_kept_mask(32, 32, 8)};
  // Two identically initialized encoders so running-stat updates cannot
  // interact between the two passes.
  auto enc2 = Encoder<float>(toy_config(), 42);
  auto dense = enc.encode(x, true);
  auto sparse = enc2.encode_sparse(x, masks, true);
  REQUIRE(dense.size() == 4);
  for (int s = 0; s < 4; ++s) {
    REQUIRE(dense[s]->shape == sparse[s].values->shape);
    CHECK((std::int64_t)sparse[s].active.active_count() ==
          (std::int64_t)sparse[s].active.a.size());
    double max_diff = 0;
    for (size_t i = 0; i < dense[s]->value.size(); ++i)
      max_diff = std::max(max_diff,
                          std::abs((double)dense[s]->value[i] - sparse[s].values->value[i]));
    CHECK(max_diff < 1e-5);
  }
}

TEST_CASE("mask pattern is preserved through the whole encoder pyramid") {
  auto enc = Encoder<float>(toy_config(), 3);
  auto x = random_image<float>(1, 32, 32, 9);
  std::vector<PatchMask> masks{generate_patch_mask(32, 32, 8, 0.5, 123)};
  auto pyr = enc.encode_sparse(x, masks, true);
  for (int s = 0; s < 4; ++s) {
    const int stride = 4 << s;
    MaskGrid expect = downsample_masks(masks, stride, 32 / stride, 32 / stride);
    CHECK(pyr[s].active.a == expect.a);
    // Values at inactive positions are exactly zero.
    const auto& fm = pyr[s];
    const int C = fm.values->shape[1], HW = fm.active.h * fm.active.w;
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i)
        if (!fm.active.a[i]) CHECK(fm.values->value[(size_t)c * HW + i] == 0.0f);
    // Replicated masks keep the active fraction of the patch grid.
    const double frac = (double)masks[0].kept_count() / (masks[0].grid_h * masks[0].grid_w);
    if (stride <= masks[0].patch)
      CHECK((double)fm.active.active_count() / (double)fm.active.a.size() ==
            doctest::Approx(frac));
  }
}

TEST_CASE("values stored at masked positions never leak into active outputs") {
  auto enc = Encoder<float>(toy_config(), 8);
  std::vector<PatchMask> masks{generate_patch_mask(32, 32, 8, 0.5, 55)};
  REQUIRE(masks[0].masked_count() > 0);
  auto x = random_image<float>(1, 32, 32, 14);
  auto base = enc.encode_sparse(x, masks, false);

  // Overwrite every masked pixel with garbage and rerun.
  auto x2 = make_node<float>(x->shape, std::vector<float>(x->value));
  MaskGrid pix = downsample_masks(masks, 1, 32, 32);
  for (size_t i = 0; i < pix.a.size(); ++i)
    if (!pix.a[i]) x2->value[i] = 1e6f;
  auto perturbed = enc.encode_sparse(x2, masks, false);

  for (int s = 0; s < 4; ++s) {
    const int HW = base[s].active.h * base[s].active.w;
    const int C = base[s].values->shape[1];
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i)
        if (base[s].active.a[i])
          CHECK(base[s].values->value[(size_t)c * HW + i] ==
                perturbed[s].values->value[(size_t)c * HW + i]);
  }
}

TEST_CASE("masked batchnorm computes statistics over active positions only") {
  // One channel, 1x4 map; actives {0,1}, values 1 and 3 -> mean 2, var 1.
  auto x = make_node<double>({1, 1, 1, 4}, {1.0, 3.0, 100.0, -50.0}, true);
  auto gamma = make_node<double>({1}, {1.0});
  auto beta = make_node<double>({1}, {0.0});
  MaskGrid g = all_active_grid(1, 1, 4);
  g.a = {1, 1, 0, 0};
  std::vector<double> rm{0.0}, rv{1.0};
  auto y = batchnorm_masked<double>(x, gamma, beta, &g, true, rm, rv);
  const double inv = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y->value[0] == doctest::Approx(-inv));
  CHECK(y->value[1] == doctest::Approx(inv));
  CHECK(y->value[2] == 0.0);
  CHECK(y->value[3] == 0.0);
  CHECK(rm[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm with zero active positions rejects the training batch") {
  auto x = make_node<float>({1, 1, 1, 2}, {1.0f, 2.0f});
  auto gamma = make_node<float>({1}, {1.0f});
  auto beta = make_node<float>({1}, {0.0f});
  MaskGrid g = all_active_grid(1, 1, 2);
  g.a = {0, 0};
  std::vector<float> rm{0.0f}, rv{1.0f};
  CHECK_THROWS_AS(batchnorm_masked<float>(x, gamma, beta, &g, true, rm, rv), ValidationError);
}

TEST_CASE("masked batchnorm gradient agrees with finite differences") {
  ParamSet<double> ps;
  auto x = make_node<double>({1, 2, 2, 2}, {0.3, -0.7, 1.2, 0.4, -0.2, 0.9, -1.1, 0.6});
  auto gamma = make_node<double>({2}, {1.1, 0.9});
  auto beta = make_node<double>({2}, {0.1, -0.2});
  ps.add("x", x);
  ps.add("gamma", gamma);
  ps.add("beta", beta);
  MaskGrid g = all_active_grid(1, 2, 2);
  g.a = {1, 0, 1, 1};
  auto fn = [&]() {
    std::vector<double> rm{0.0, 0.0}, rv{1.0, 1.0};
    return l2_loss(batchnorm_masked<double>(x, gamma, beta, &g, true, rm, rv),
                   make_node<double>({1, 2, 2, 2}, {1, 0, 0, 1, 0, 1, 1, 0}));
  };
  CHECK(grad_check<double>(fn, ps, 1e-5) < 1e-6);
}

TEST_CASE("sparse maxpool ignores inactive inputs and deactivates empty windows") {
  auto x = make_node<float>({1, 1, 2, 4}, {5, 1, -2, -3, 4, 2, -1, -4});
  MaskGrid g = all_active_grid(1, 2, 4);
  g.a = {0, 1, 0, 0,
         0, 1, 0, 0};
  SparseFeatureMap<float> sm{mul_mask(x, g), g};
  auto out = sparse_maxpool2d(sm, 2, 2, 0);
  REQUIRE(out.values->shape == Shape{1, 1, 1, 2});
  CHECK(out.values->value[0] == 2.0f);  // max over active {1, 2}
  CHECK(out.active.at(0, 0, 0) == true);
  CHECK(out.values->value[1] == 0.0f);  // window fully inactive
  CHECK(out.active.at(0, 0, 1) == false);
}

TEST_CASE("default encoder parameter count sits within 2% of 23.5M") {
  EncoderConfig ec;  // ResNet50 widths, 1 input channel
  const std::int64_t formula = encoder_param_count_formula(ec);
  CHECK(formula == 23501760);
  CHECK(std::abs((double)formula - 23.5e6) / 23.5e6 < 0.02);
}

TEST_CASE("constructed parameter total matches the closed-form count") {
  auto ec = toy_config();
  auto enc = Encoder<float>(ec, 17);
  CHECK(enc.parameter_count() == encoder_param_count_formula(ec));
}

TEST_CASE("encoder initialization is seed-deterministic") {
  auto a = Encoder<float>(toy_config(), 99);
  auto b = Encoder<float>(toy_config(), 99);
  auto c = Encoder<float>(toy_config(), 100);
  REQUIRE(a.params.params.size() == b.params.params.size());
  bool all_equal = true, any_diff_c = false;
  for (size_t i = 0; i < a.params.params.size(); ++i) {
    if (a.params.params[i].second->value != b.params.params[i].second->value) all_equal = false;
    if (a.params.params[i].second->value != c.params.params[i].second->value) any_diff_c = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("encoder rejects bad input geometry") {
  auto enc = Encoder<float>(toy_config(), 1);
  CHECK_THROWS_AS(enc.encode(make_node<float>({1, 1, 30, 32}), false), ConfigError);
  CHECK_THROWS_AS(enc.encode(make_node<float>({1, 3, 32, 32}), false), ConfigError);
}

TEST_CASE("pyramid extents follow strides 4/8/16/32") {
  auto enc = Encoder<float>(toy_config(), 2);
  auto pyr = enc.encode(random_image<float>(1, 64, 32, 4), false);
  CHECK(pyr[0]->shape == Shape{1, 8, 16, 8});
  CHECK(pyr[1]->shape == Shape{1, 16, 8, 4});
  CHECK(pyr[2]->shape == Shape{1, 32, 4, 2});
  CHECK(pyr[3]->shape == Shape{1, 64, 2, 1});
}
