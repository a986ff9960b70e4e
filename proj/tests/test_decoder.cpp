#include <doctest.h>

#include <cmath>
#include <random>

#include "t2i/decoder.hpp"
#include "t2i/errors.hpp"
#include "t2i/ops.hpp"
#include "test_util.hpp"

using namespace t2i;
using t2i::testing::gradcheck;
using t2i::testing::max_abs_diff;
using t2i::testing::random_tensor;

namespace {
std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}
}  // namespace

TEST_CASE("default schedule") {
  auto s = default_decoder_schedule();
  REQUIRE(s.size() == 4);
  CHECK(s[0] == StageSpec{512, 512});
  CHECK(s[1] == StageSpec{256, 256});
  CHECK(s[2] == StageSpec{64, 64});
  CHECK(s[3] == StageSpec{32, 32});
}

TEST_CASE("tokens_to_grid") {
  std::mt19937_64 rng(1);
  auto tokens = random_tensor({2, 16, 64}, rng);
  auto grid = tokens_to_grid(tokens);
  CHECK(grid.shape() == Shape{2, 4, 4, 64});
  CHECK(tokens_to_grid(Tensor::zeros({1, 1, 8})).shape() == Shape{1, 1, 1, 8});
  CHECK(vec(tokens_to_grid(grid_to_tokens(grid))) == vec(grid));
  CHECK_THROWS_AS(tokens_to_grid(Tensor::zeros({1, 8, 4})), ConfigError);
}

TEST_CASE("residual_block") {
  std::mt19937_64 rng(2);
  ParameterStore store;
  SUBCASE("zeroed conv path returns relu(x)") {
    auto p = make_residual_block(ParamBuilder(store, rng), 4, 4);
    p.conv1 = Tensor::zeros(p.conv1.shape());
    p.conv2 = Tensor::zeros(p.conv2.shape());
    auto x = random_tensor({2, 3, 3, 4}, rng);
    CHECK(vec(residual_block(x, p, Mode::train)) == vec(relu(x)));
  }
  SUBCASE("shape preservation") {
    auto p = make_residual_block(ParamBuilder(store, rng), 64, 64);
    CHECK_FALSE(p.projection_w.has_value());
    auto y = residual_block(random_tensor({1, 8, 8, 64}, rng), p, Mode::train);
    CHECK(y.shape() == Shape{1, 8, 8, 64});
  }
  SUBCASE("channel change uses a 1x1 projection") {
    auto p = make_residual_block(ParamBuilder(store, rng), 3, 5);
    REQUIRE(p.projection_w.has_value());
    CHECK(residual_block(random_tensor({1, 4, 4, 3}, rng), p, Mode::train).shape() == Shape{1, 4, 4, 5});
  }
  SUBCASE("gradient through a full block") {
    auto p = make_residual_block(ParamBuilder(store, rng), 3, 4);
    auto x = random_tensor({2, 4, 4, 3}, rng);
    auto w = random_tensor({2, 4, 4, 4}, rng);
    std::vector<Tensor> all{x};
    for (const auto& e : store.trainable()) all.push_back(e.tensor);
    auto r = gradcheck([&] { return sum(mul(residual_block(x, p, Mode::train), w)); }, all, rng);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("upsample_stage") {
  std::mt19937_64 rng(3);
  ParameterStore store;
  SUBCASE("CT512-RL512 doubles 4x4x64 to 8x8x512") {
    auto p = make_upsample_stage(ParamBuilder(store, rng), 64, {512, 512}, true);
    auto y = upsample_stage(random_tensor({1, 4, 4, 64}, rng), p, Mode::train);
    CHECK(y.shape() == Shape{1, 8, 8, 512});
    CHECK(all_finite(y));
  }
  SUBCASE("full schedule goes 4 -> 8 -> 16 -> 32 -> 64") {
    std::size_t in = 64, side = 4;
    Tensor x = random_tensor({1, 4, 4, 64}, rng);
    int i = 0;
    for (const auto& s : default_decoder_schedule()) {
      auto p = make_upsample_stage(ParamBuilder(store, rng, "s" + std::to_string(i++) + "/"), in, s, true);
      x = upsample_stage(x, p, Mode::train);
      side *= 2;
      in = s.residual_channels;
      CHECK(x.shape() == Shape{1, side, side, in});
      CHECK(all_finite(x));
    }
    CHECK(side == 64);
  }
  SUBCASE("determinism") {
    auto p = make_upsample_stage(ParamBuilder(store, rng), 8, {6, 6}, true);
    auto x = random_tensor({2, 3, 3, 8}, rng);
    upsample_stage(x, p, Mode::train);  // populate running stats
    CHECK(vec(upsample_stage(x, p, Mode::eval)) == vec(upsample_stage(x, p, Mode::eval)));
  }
  SUBCASE("every parameter receives gradient") {
    auto p = make_upsample_stage(ParamBuilder(store, rng), 4, {6, 5}, true);
    auto x = random_tensor({2, 3, 3, 4}, rng);
    auto w = random_tensor({2, 6, 6, 5}, rng);
    Graph g;
    GraphScope scope(g);
    g.backward(sum(mul(upsample_stage(x, p, Mode::train), w)));
    for (const auto& e : store.trainable()) {
      double n = 0;
      for (double v : e.tensor.grad()) n += std::abs(v);
      CHECK_MESSAGE(n > 0, e.name);
    }
  }
}

TEST_CASE("upsample_concat") {
  std::mt19937_64 rng(4);
  SUBCASE("same size is a pure channel concat") {
    auto grid = random_tensor({1, 4, 4, 8}, rng), prev = random_tensor({1, 4, 4, 3}, rng);
    CHECK(vec(upsample_concat(grid, prev)) == vec(concat({prev, grid}, -1)));
  }
  SUBCASE("constant grid gives constant channels") {
    auto out = upsample_concat(Tensor::full({1, 2, 2, 2}, 0.25), Tensor::zeros({1, 16, 8, 1}));
    CHECK(out.shape() == Shape{1, 16, 8, 3});
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (i % 3 != 0) CHECK(out.at(i) == doctest::Approx(0.25).epsilon(1e-15));
    }
  }
  SUBCASE("composes bilinear upsample, 1x1 conv and concat") {
    ParameterStore store;
    auto skip = make_skip_conv(ParamBuilder(store, rng), 8, 5);
    auto grid = random_tensor({2, 4, 4, 8}, rng), prev = random_tensor({2, 8, 8, 32}, rng);
    auto out = upsample_concat(grid, prev, &skip);
    CHECK(out.shape() == Shape{2, 8, 8, 37});
    auto expected = concat({prev, conv2d(bilinear_upsample(grid, 8, 8), skip.w, skip.b)}, -1);
    CHECK(max_abs_diff(out.data(), expected.data()) == 0.0);
    auto plain = upsample_concat(grid, prev);
    CHECK(plain.shape() == Shape{2, 8, 8, 40});
  }
  SUBCASE("smaller target") {
    CHECK_THROWS_AS(upsample_concat(Tensor::zeros({1, 4, 4, 2}), Tensor::zeros({1, 2, 2, 2})), DimensionError);
  }
}

TEST_CASE("output_head") {
  std::mt19937_64 rng(5);
  ParameterStore store;
  auto x = random_tensor({1, 8, 8, 4}, rng, -5, 5);
  SUBCASE("tanh output is bounded") {
    auto p = make_output_head(ParamBuilder(store, rng), 4, 3, FinalActivation::tanh);
    auto y = output_head(x, p);
    CHECK(y.shape() == Shape{1, 8, 8, 3});
    for (double v : y.data()) CHECK(std::abs(v) <= 1.0);
  }
  SUBCASE("logits are unbounded") {
    auto p = make_output_head(ParamBuilder(store, rng), 4, 3, FinalActivation::none);
    for (auto& v : p.w.mutable_data()) v *= 10;
    double mx = 0;
    auto y = output_head(x, p);
    for (double v : y.data()) mx = std::max(mx, std::abs(v));
    CHECK(mx > 1.0);
  }
  SUBCASE("zero weights give a zero image") {
    auto p = make_output_head(ParamBuilder(store, rng), 4, 3, FinalActivation::tanh);
    p.w = Tensor::zeros(p.w.shape());
    auto y = output_head(x, p);
    for (double v : y.data()) CHECK(v == 0.0);
  }
}
