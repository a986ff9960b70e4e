#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <utility>

#include "t2i/checkpoint.hpp"
#include "t2i/errors.hpp"
#include "t2i/generator.hpp"
#include "test_util.hpp"

using namespace t2i;
using t2i::testing::random_tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

ModelConfig small(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.ffn_width = 8;
  c.num_layers = 2;
  c.schedule = {{16, 16}, {8, 8}};
  c.baseline_channels = {8, 16};
  c.seed = 11;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("t2i_test_" + name)).string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

using Manifest = std::vector<std::pair<std::string, Shape>>;

// Parameter names and shapes of the default generator C, written out by hand
// from the layer table: P16 on 64x64x3, PE to 64, four TL (2 heads, FFN 32),
// CT512-RL512, CT256-RL256, CT64-RL64, CT32-RL32, 3x3 head.
Manifest golden_c_manifest() {
  Manifest m = {
      {"patch_encoder/projection", {768, 64}},
      {"patch_encoder/projection_bias", {64}},
      {"patch_encoder/position_embeddings", {16, 64}},
  };
  for (int l = 0; l < 4; ++l) {
    const std::string t = "transformer" + std::to_string(l) + "/";
    for (int h = 0; h < 2; ++h) {
      const std::string hp = t + "head" + std::to_string(h) + "/";
      m.push_back({hp + "w_q", {64, 32}});
      m.push_back({hp + "w_k", {64, 32}});
      m.push_back({hp + "w_v", {64, 32}});
    }
    m.push_back({t + "w_o", {64, 64}});
    m.push_back({t + "ln1/gamma", {64}});
    m.push_back({t + "ln1/beta", {64}});
    m.push_back({t + "ffn/w1", {64, 32}});
    m.push_back({t + "ffn/b1", {32}});
    m.push_back({t + "ffn/w2", {32, 64}});
    m.push_back({t + "ffn/b2", {64}});
    m.push_back({t + "ln2/gamma", {64}});
    m.push_back({t + "ln2/beta", {64}});
  }
  auto bn = [&](const std::string& p, std::size_t c) {
    m.push_back({p + "gamma", {c}});
    m.push_back({p + "beta", {c}});
    m.push_back({p + "running_mean", {c}});
    m.push_back({p + "running_var", {c}});
    m.push_back({p + "tracked", {1}});
  };
  const std::size_t chans[] = {512, 256, 64, 32};
  std::size_t in = 64;
  for (int s = 0; s < 4; ++s) {
    const std::string st = "stage" + std::to_string(s) + "/";
    const std::size_t c = chans[s];
    m.push_back({st + "transpose", {4, 4, c, in}});
    bn(st + "bn/", c);
    m.push_back({st + "residual/conv1", {3, 3, c, c}});
    bn(st + "residual/bn1/", c);
    m.push_back({st + "residual/conv2", {3, 3, c, c}});
    bn(st + "residual/bn2/", c);
    in = c;
  }
  m.push_back({"head/w", {3, 3, 32, 3}});
  m.push_back({"head/b", {3}});
  return m;
}

}  // namespace

TEST_CASE("default generator C matches the layer table") {
  Generator g(ModelConfig{});
  CHECK(g.architecture() ==
        "P16 - PE - TL - TL - TL - TL - CT512 - RL512 - CT256 - RL256 - CT64 - RL64 - CT32 - RL32 - C");

  const std::vector<LayerInfo> expected = {
      {"P16", {16, 768}},          {"PE", {16, 64}},          {"TL", {16, 64}},          {"TL", {16, 64}},
      {"TL", {16, 64}},            {"TL", {16, 64}},          {"CT512", {8, 8, 512}},    {"RL512", {8, 8, 512}},
      {"CT256", {16, 16, 256}},    {"RL256", {16, 16, 256}},  {"CT64", {32, 32, 64}},    {"RL64", {32, 32, 64}},
      {"CT32", {64, 64, 32}},      {"RL32", {64, 64, 32}},    {"C", {64, 64, 3}},
  };
  auto layers = g.layers();
  REQUIRE(layers.size() == expected.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    CHECK(layers[i].label == expected[i].label);
    CHECK(layers[i].output == expected[i].output);
  }

  SUBCASE("golden parameter manifest") {
    auto golden = golden_c_manifest();
    const auto& entries = g.parameters().entries();
    REQUIRE(entries.size() == golden.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      CHECK(entries[i].name == golden[i].first);
      CHECK(entries[i].tensor.shape() == golden[i].second);
    }
    // PE + 4 TL + stages + head, counted per layer.
    const std::size_t pe = 768 * 64 + 64 + 16 * 64;
    const std::size_t tl = 6 * 64 * 32 + 64 * 64 + 4 * 64 + (64 * 32 + 32 + 32 * 64 + 64);
    auto stage = [](std::size_t in, std::size_t c) { return 16 * in * c + 2 * c + 2 * 9 * c * c + 4 * c; };
    const std::size_t total =
        pe + 4 * tl + stage(64, 512) + stage(512, 256) + stage(256, 64) + stage(64, 32) + 9 * 32 * 3 + 3;
    CHECK(g.parameters().trainable_scalar_count() == total);
  }

  SUBCASE("64x64x3 in gives 64x64x3 segmentation logits") {
    std::mt19937_64 rng(1);
    auto y = g.forward(random_tensor({1, 64, 64, 3}, rng), Mode::eval);
    CHECK(y.shape() == Shape{1, 64, 64, 3});
  }
}

TEST_CASE("patch count and output size over image and patch sizes") {
  std::mt19937_64 rng(2);
  for (std::size_t size : {32u, 64u}) {
    for (std::size_t patch : {8u, 16u}) {
      for (Variant v : {Variant::A, Variant::B, Variant::C}) {
        ModelConfig c;
        c.variant = v;
        c.image_size = size;
        c.patch_size = patch;
        c.embed_dim = 16;
        c.num_layers = 1;
        c.schedule = {};
        CAPTURE(size);
        CAPTURE(patch);
        CAPTURE(to_string(v));
        Generator g(c);
        const std::size_t side = size / patch;
        CHECK(g.layers()[0].output[0] == side * side);
        CHECK(g.layers().back().output == Shape{size, size, 3});
        CHECK(g.forward(random_tensor({1, size, size, 3}, rng), Mode::train).shape() == Shape{1, size, size, 3});
      }
    }
    for (Variant v : {Variant::unet, Variant::autoencoder}) {
      ModelConfig c;
      c.variant = v;
      c.image_size = size;
      c.baseline_channels = {8, 16, 16, 32};
      Generator g(c);
      CHECK(g.forward(random_tensor({1, size, size, 3}, rng), Mode::train).shape() == Shape{1, size, size, 3});
    }
  }
}

TEST_CASE("fitted default schedules") {
  ModelConfig c;
  c.image_size = 64;
  c.patch_size = 8;
  CHECK(c.resolved_schedule() == std::vector<StageSpec>{{256, 256}, {64, 64}, {32, 32}});
  c.patch_size = 64;
  CHECK(c.resolved_schedule().size() == 6);
  CHECK(c.resolved_schedule().front() == StageSpec{512, 512});
}

TEST_CASE("variant structure") {
  ModelConfig c = small(Variant::C);
  Generator gc(c);
  c.variant = Variant::A;
  Generator ga(c);
  c.variant = Variant::B;
  Generator gb(c);
  CHECK(ga.parameters().trainable_scalar_count() < gc.parameters().trainable_scalar_count());
  for (const auto& e : ga.parameters().entries()) CHECK(e.name.find("residual") == std::string::npos);
  CHECK(ga.architecture() == "P4 - PE - TL - TL - CT16 - CT8 - C");
  CHECK(gb.architecture() == "P4 - PE - TL - TL - UC - CT16 - UC - CT8 - UC - C");
  CHECK(gc.architecture() == "P4 - PE - TL - TL - CT16 - RL16 - CT8 - RL8 - C");
  // B's decoder convs each see the 16 embedded-patch channels on top.
  const auto* t0 = gb.parameters().find("stage0/transpose");
  REQUIRE(t0);
  CHECK(t0->tensor.shape() == Shape{4, 4, 16, 32});
  CHECK(gb.parameters().find("head/w")->tensor.shape() == Shape{3, 3, 8 + 16, 3});

  c.skip_conv = true;
  c.skip_channels = 4;
  Generator gbs(c);
  CHECK(gbs.parameters().find("skip0/w")->tensor.shape() == Shape{1, 1, 16, 4});
  CHECK(gbs.parameters().find("skip2/w") != nullptr);
  CHECK(gbs.parameters().find("head/w")->tensor.shape() == Shape{3, 3, 8 + 4, 3});
  std::mt19937_64 rng(3);
  CHECK(gbs.forward(random_tensor({2, 16, 16, 3}, rng), Mode::train).shape() == Shape{2, 16, 16, 3});
}

TEST_CASE("determinism") {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 16, 16, 3}, rng);
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::unet, Variant::autoencoder}) {
    CAPTURE(to_string(v));
    Generator g1(small(v)), g2(small(v));
    CHECK(vec(g1.forward(x, Mode::eval)) == vec(g2.forward(x, Mode::eval)));
    CHECK(vec(g1.forward(x, Mode::eval)) == vec(g1.forward(x, Mode::eval)));
    auto other = small(v);
    other.seed = 12;
    CHECK(vec(Generator(other).forward(x, Mode::eval)) != vec(g1.forward(x, Mode::eval)));
  }
}

TEST_CASE("tasks") {
  std::mt19937_64 rng(5);
  auto c = small(Variant::C);
  c.task = Task::regression;
  c.out_channels = 1;
  Generator g(c);
  auto y = g.forward(random_tensor({1, 16, 16, 3}, rng), Mode::train);
  CHECK(y.shape() == Shape{1, 16, 16, 1});
  for (double v : y.data()) CHECK(std::abs(v) <= 1.0);
  CHECK_THROWS_AS(g.forward(Tensor::zeros({1, 64, 64, 3}), Mode::eval), DimensionError);
  CHECK_THROWS_AS(g.forward(Tensor::zeros({1, 16, 16, 1}), Mode::eval), DimensionError);
}

TEST_CASE("baselines") {
  ModelConfig c;
  c.variant = Variant::autoencoder;
  Generator ae(c);
  c.variant = Variant::unet;
  Generator un(c);
  Generator gc(ModelConfig{});
  CHECK(ae.architecture() == "D64 - D128 - D256 - D512 - U256 - U128 - U64 - U32 - C");
  CHECK(un.architecture() == "D64 - D128 - D256 - D512 - U256 - CAT - U128 - CAT - U64 - CAT - U32 - C");

  SUBCASE("unet without skips is the autoencoder") {
    auto ul = un.layers();
    std::erase_if(ul, [](const LayerInfo& l) { return l.label == "CAT"; });
    auto al = ae.layers();
    REQUIRE(ul.size() == al.size());
    for (std::size_t i = 0; i < ul.size(); ++i) {
      CHECK(ul[i].label == al[i].label);
      CHECK(ul[i].output == al[i].output);
    }
    const auto& ue = un.parameters().entries();
    const auto& ae_e = ae.parameters().entries();
    REQUIRE(ue.size() == ae_e.size());
    for (std::size_t i = 0; i < ue.size(); ++i) CHECK(ue[i].name == ae_e[i].name);
    // Only the inputs of the up stages that follow a concatenation widen.
    CHECK(un.parameters().find("up1/transpose")->tensor.dim(3) == 2 * ae.parameters().find("up1/transpose")->tensor.dim(3));
    CHECK(un.parameters().find("up0/transpose")->tensor.shape() == ae.parameters().find("up0/transpose")->tensor.shape());
  }
  SUBCASE("parameter counts within 2x of generator C") {
    const double pc = static_cast<double>(gc.parameters().trainable_scalar_count());
    for (const Generator* g : {&ae, &un}) {
      const double r = static_cast<double>(g->parameters().trainable_scalar_count()) / pc;
      CHECK(r > 0.5);
      CHECK(r < 2.0);
    }
  }
  SUBCASE("forward shape") {
    std::mt19937_64 rng(6);
    CHECK(ae.forward(random_tensor({1, 64, 64, 3}, rng), Mode::train).shape() == Shape{1, 64, 64, 3});
  }
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.patch_size = 12;
  CHECK_THROWS_AS(Generator{c}, ConfigError);
  c = ModelConfig{};
  c.num_heads = 3;
  CHECK_THROWS_AS(Generator{c}, ConfigError);
  c = ModelConfig{};
  c.schedule = {{64, 64}};
  CHECK_THROWS_WITH_AS(Generator{c}, doctest::Contains("doublings"), ConfigError);
  c = ModelConfig{};
  c.variant = Variant::A;
  c.schedule = {{512, 256}, {256, 256}, {64, 64}, {32, 32}};
  CHECK_THROWS_WITH_AS(Generator{c}, doctest::Contains("no residual"), ConfigError);
  c = ModelConfig{};
  c.out_channels = 1;
  CHECK_THROWS_AS(Generator{c}, ConfigError);
  c = ModelConfig{};
  c.variant = Variant::unet;
  c.image_size = 40;
  CHECK_THROWS_AS(Generator{c}, ConfigError);
  CHECK_THROWS_AS(parse_variant("D"), ConfigError);
}

TEST_CASE("config text round trip") {
  auto c = small(Variant::B);
  c.skip_conv = true;
  c.seed = 18446744073709551615ull;
  c.task = Task::regression;
  c.out_channels = 1;
  auto back = model_config_from_text(to_text(c));
  CHECK(to_text(back) == to_text(c));
  CHECK(back.seed == c.seed);
  CHECK(back.schedule == c.schedule);
  CHECK(model_config_from_text(to_text(ModelConfig{})).schedule.empty());
  CHECK_THROWS_AS(model_config_from_text("variant=C\nbogus=1\n"), ConfigError);
  CHECK_THROWS_AS(model_config_from_text("image_size=abc\n"), ConfigError);
  CHECK_THROWS_AS(model_config_from_text("schedule=1:2:3\n"), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({2, 16, 16, 3}, rng);
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::unet, Variant::autoencoder}) {
    CAPTURE(to_string(v));
    Generator g(small(v));
    g.forward(x, Mode::train);  // move the running statistics off their initial values
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(g, path);
    auto loaded = load_checkpoint(path);
    CHECK_FALSE(loaded.optimizer.has_value());
    const auto& a = g.parameters().entries();
    const auto& b = loaded.generator.parameters().entries();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(a[i].trainable == b[i].trainable);
      CHECK(vec(a[i].tensor) == vec(b[i].tensor));
    }
    CHECK(vec(g.forward(x, Mode::eval)) == vec(loaded.generator.forward(x, Mode::eval)));
    std::remove(path.c_str());
  }
}

TEST_CASE("checkpoint bytes") {
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_checkpoint(Generator(small(Variant::C)), p1);
  save_checkpoint(Generator(small(Variant::C)), p2);
  const auto bytes = read_bytes(p1);
  CHECK(bytes == read_bytes(p2));
  REQUIRE(bytes.size() > 64);
  CHECK(std::string(bytes.data(), 7) == "T2ICKPT");
  CHECK(bytes[7] == '\0');
  CHECK(bytes[8] == 1);  // version, little-endian

  SUBCASE("corrupted magic") {
    auto bad = bytes;
    bad[0] = 'X';
    write_bytes(p2, bad);
    CHECK_THROWS_AS(load_checkpoint(p2), FormatError);
  }
  SUBCASE("truncated") {
    write_bytes(p2, {bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2)});
    CHECK_THROWS_AS(load_checkpoint(p2), FormatError);
    write_bytes(p2, {bytes.begin(), bytes.begin() + 5});
    CHECK_THROWS_AS(load_checkpoint(p2), FormatError);
  }
  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bytes.size() - 100] ^= 0x01;
    write_bytes(p2, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(p2), doctest::Contains("CRC"), FormatError);
  }
  SUBCASE("newer version") {
    auto bad = bytes;
    bad[8] = 2;
    write_bytes(p2, bad);
    CHECK_THROWS_AS(load_checkpoint(p2), VersionError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), IoError); }
  SUBCASE("A refused by a C model") {
    save_checkpoint(Generator(small(Variant::A)), p2);
    Generator c(small(Variant::C));
    const auto before = vec(c.parameters().entries().back().tensor);
    CHECK_THROWS_AS(load_checkpoint_into(c, p2), NameMismatchError);
    CHECK(vec(c.parameters().entries().back().tensor) == before);
  }
  SUBCASE("different width refused") {
    auto cfg = small(Variant::C);
    cfg.schedule = {{16, 16}, {4, 4}};
    save_checkpoint(Generator(cfg), p2);
    Generator c(small(Variant::C));
    CHECK_THROWS_AS(load_checkpoint_into(c, p2), NameMismatchError);
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint optimizer record") {
  Generator g(small(Variant::A));
  OptimizerRecord o;
  o.step = 42;
  o.lr = 2e-4;
  o.beta1 = 0.5;
  o.beta2 = 0.999;
  o.eps = 1e-8;
  o.moments.push_back({"m/head/b", Tensor({3}, {0.1, -0.2, 0.3}), false});
  o.moments.push_back({"v/head/b", Tensor({3}, {1e-300, 0.0, 5.0}), false});
  const auto path = temp_path("opt.ckpt");
  save_checkpoint(g, path, &o);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.optimizer.has_value());
  CHECK(loaded.optimizer->step == 42);
  CHECK(loaded.optimizer->beta2 == 0.999);
  REQUIRE(loaded.optimizer->moments.size() == 2);
  CHECK(loaded.optimizer->moments[1].name == "v/head/b");
  CHECK(vec(loaded.optimizer->moments[1].tensor) == std::vector<double>{1e-300, 0.0, 5.0});
  std::remove(path.c_str());
}
