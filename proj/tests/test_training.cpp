#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "t2i/errors.hpp"
#include "t2i/ops.hpp"
#include "t2i/training.hpp"
#include "test_util.hpp"

using namespace t2i;
using t2i::testing::gradcheck;
using t2i::testing::random_tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Per-pixel -log softmax, long double, no log-sum-exp shift.
double scc_oracle(const std::vector<double>& z, const std::vector<std::int32_t>& labels, std::size_t k) {
  long double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    long double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<long double>(z[i * k + j]));
    total += std::log(s) - z[i * k + static_cast<std::size_t>(labels[i])];
  }
  return static_cast<double>(total / labels.size());
}

ModelConfig tiny_model(Task task, std::size_t out) {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.ffn_width = 8;
  c.num_layers = 1;
  c.schedule = {{8, 8}, {4, 4}};
  c.task = task;
  c.out_channels = out;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("sparse categorical crossentropy") {
  std::mt19937_64 rng(1);
  SUBCASE("uniform logits give ln K") {
    auto z = Tensor::full({2, 3, 3, 3}, 0.7);
    std::vector<std::int32_t> lab(18);
    for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<std::int32_t>(i % 3);
    CHECK(sparse_categorical_crossentropy(z, lab).item() == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  }
  SUBCASE("saturated correct class") {
    auto z = Tensor::zeros({1, 2, 2, 3});
    std::vector<std::int32_t> lab{0, 1, 2, 1};
    for (std::size_t i = 0; i < 4; ++i) z.mutable_data()[i * 3 + static_cast<std::size_t>(lab[i])] = 20.0;
    CHECK(sparse_categorical_crossentropy(z, lab).item() < 1e-8);
  }
  SUBCASE("random 2x2x2x3 against the per-pixel oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      auto z = random_tensor({2, 2, 2, 3}, rng, -4, 4);
      std::vector<std::int32_t> lab(8);
      for (auto& l : lab) l = static_cast<std::int32_t>(rng() % 3);
      const double got = sparse_categorical_crossentropy(z, lab).item();
      CHECK(std::abs(got - scc_oracle(vec(z), lab, 3)) < 1e-12);
      CHECK(got >= 0.0);
    }
  }
  SUBCASE("large logits stay finite") {
    auto z = Tensor({1, 1, 1, 2}, {1000.0, -1000.0});
    CHECK(sparse_categorical_crossentropy(z, std::vector<std::int32_t>{1}).item() == doctest::Approx(2000.0));
  }
  SUBCASE("gradient") {
    auto z = random_tensor({2, 3, 2, 4}, rng, -2, 2);
    std::vector<std::int32_t> lab(12);
    for (auto& l : lab) l = static_cast<std::int32_t>(rng() % 4);
    auto r = gradcheck([&] { return sparse_categorical_crossentropy(z, lab); }, {z}, rng);
    CHECK(r.max_rel_err < 1e-6);
  }
  SUBCASE("out-of-range label names the pixel") {
    auto z = Tensor::zeros({2, 2, 3, 3});
    std::vector<std::int32_t> lab(12, 0);
    lab[6 + 1 * 3 + 2] = 3;  // sample 1, y 1, x 2
    CHECK_THROWS_WITH_AS(sparse_categorical_crossentropy(z, lab), doctest::Contains("sample 1, pixel (y=1, x=2)"),
                         DataError);
    lab[6 + 1 * 3 + 2] = -1;
    CHECK_THROWS_AS(sparse_categorical_crossentropy(z, lab), DataError);
    CHECK_THROWS_AS(sparse_categorical_crossentropy(z, std::vector<std::int32_t>(5)), DimensionError);
  }
}

TEST_CASE("mae loss") {
  std::mt19937_64 rng(2);
  auto p = random_tensor({2, 3, 3, 1}, rng);
  CHECK(mae_loss(p, p).item() == 0.0);
  std::vector<double> shifted(p.data().begin(), p.data().end());
  for (auto& v : shifted) v -= 0.375;
  CHECK(mae_loss(p, Tensor(p.shape(), shifted)).item() == doctest::Approx(0.375).epsilon(1e-15));
  auto t = random_tensor(p.shape(), rng);
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(static_cast<long double>(p.at(i)) - t.at(i));
  CHECK(std::abs(mae_loss(p, t).item() - static_cast<double>(s / p.size())) < 1e-15);
  auto r = gradcheck([&] { return mae_loss(p, t); }, {p, t}, rng);
  CHECK(r.max_rel_err < 1e-6);
  SUBCASE("zero subgradient at ties") {
    Tensor a({2}, {0.5, 1.0}), b({2}, {0.5, 0.0});
    a.set_requires_grad(true);
    Graph g;
    GraphScope scope(g);
    g.backward(mae_loss(a, b));
    CHECK(a.grad()[0] == 0.0);
    CHECK(a.grad()[1] == 0.5);
  }
  CHECK_THROWS_AS(mae_loss(p, Tensor::zeros({2, 3, 3, 3})), DimensionError);
}

TEST_CASE("adam") {
  SUBCASE("first step with g = 1") {
    Tensor p = Tensor::scalar(1.0, true);
    Adam adam({{"p", p, true}});
    p.mutable_grad()[0] = 1.0;
    adam.step();
    // m_hat = g, v_hat = g^2 after bias correction
    CHECK(p.item() == doctest::Approx(1.0 - 2e-4 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(adam.steps() == 1);
  }
  SUBCASE("zero gradient is a no-op that still counts") {
    std::mt19937_64 rng(3);
    Tensor p = random_tensor({3, 2}, rng);
    const auto before = vec(p);
    Adam adam({{"p", p, true}});
    for (int i = 0; i < 5; ++i) {
      p.zero_grad();
      p.mutable_grad();
      adam.step();
    }
    CHECK(vec(p) == before);
    CHECK(adam.steps() == 5);
  }
  SUBCASE("10 steps on p^2 match the reference trace") {
    for (double p0 : {1.0, -0.3, 5.0}) {
      Tensor p = Tensor::scalar(p0, true);
      Adam adam({{"p", p, true}});
      std::vector<double> trace;
      for (int i = 0; i < 10; ++i) {
        p.release_grad();
        {
          Graph g;
          GraphScope scope(g);
          g.backward(mul(p, p));
        }
        adam.step();
        trace.push_back(p.item());
      }
      const auto ref = oracle::adam_trace(p0, [](double x) { return 2 * x; }, 10, 2e-4, 0.5, 0.999, 1e-8);
      for (int i = 0; i < 10; ++i) CHECK(std::abs(trace[i] - ref[i]) < 1e-12);
    }
  }
  SUBCASE("missing gradient names the parameter") {
    Tensor a = Tensor::scalar(1.0, true), b = Tensor::scalar(2.0, true);
    Adam adam({{"enc/a", a, true}, {"dec/b", b, true}});
    a.mutable_grad()[0] = 1.0;
    CHECK_THROWS_WITH_AS(adam.step(), doctest::Contains("dec/b"), ContractError);
    CHECK(adam.steps() == 0);
    CHECK(a.item() == 1.0);
  }
  SUBCASE("record and restore") {
    Tensor a = Tensor::scalar(1.0, true);
    Adam adam({{"a", a, true}});
    a.mutable_grad()[0] = 0.5;
    adam.step();
    adam.step();
    auto rec = adam.record();
    CHECK(rec.step == 2);
    REQUIRE(rec.moments.size() == 2);
    CHECK(rec.moments[0].name == "m/a");
    Tensor a2 = Tensor::scalar(a.item(), true);
    Adam other({{"a", a2, true}});
    other.restore(rec);
    a.mutable_grad()[0] = -0.25;
    a2.mutable_grad()[0] = -0.25;
    adam.step();
    other.step();
    CHECK(a.item() == a2.item());
    Adam wrong({{"b", Tensor::scalar(0.0, true), true}});
    CHECK_THROWS_AS(wrong.restore(rec), NameMismatchError);
  }
}

TEST_CASE("training loop") {
  auto data = synth_segmentation_dataset(4, 16, 3, 9);
  SUBCASE("one epoch of 4 samples at batch 2 is 2 steps") {
    Generator g(tiny_model(Task::segmentation, 3));
    TrainOptions o;
    o.batch_size = 2;
    auto r = train(g, data, o);
    CHECK(r.log.size() == 2);
    CHECK(r.epochs_completed == 1);
    CHECK(r.log.back().step == 2);
    CHECK(r.optimizer.step == 2);
  }
  SUBCASE("partial last batch is kept") {
    auto five = synth_segmentation_dataset(5, 16, 3, 9);
    Generator g(tiny_model(Task::segmentation, 3));
    TrainOptions o;
    o.batch_size = 2;
    o.epochs = 2;
    CHECK(train(g, five, o).log.size() == 6);
  }
  SUBCASE("same seed gives bit-identical runs") {
    TrainOptions o;
    o.batch_size = 3;
    o.epochs = 3;
    o.seed = 5;
    Generator g1(tiny_model(Task::segmentation, 3)), g2(tiny_model(Task::segmentation, 3));
    auto r1 = train(g1, data, o), r2 = train(g2, data, o);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r2.log[i].loss);
    const auto& e1 = g1.parameters().entries();
    const auto& e2 = g2.parameters().entries();
    for (std::size_t i = 0; i < e1.size(); ++i) CHECK(vec(e1[i].tensor) == vec(e2[i].tensor));
    o.seed = 6;
    Generator g3(tiny_model(Task::segmentation, 3));
    CHECK(train(g3, data, o).log.back().loss != r1.log.back().loss);
  }
  SUBCASE("stopping") {
    Generator g(tiny_model(Task::segmentation, 3));
    TrainOptions o;
    o.batch_size = 1;
    o.epochs = 10;
    o.max_steps = 7;
    std::size_t epochs_seen = 0;
    o.on_epoch = [&](std::size_t) { ++epochs_seen; };
    auto r = train(g, data, o);
    CHECK(r.log.size() == 7);
    CHECK(r.epochs_completed == 1);
    CHECK(epochs_seen == 1);
    o.max_steps = 0;
    o.on_step = [](const TrainRecord& rec) { return rec.step < 3; };
    r = train(g, data, o);
    CHECK(r.log.size() == 3);
    CHECK(r.stopped_early);
  }
  SUBCASE("a small step descends on a fixed batch") {
    Generator g(tiny_model(Task::segmentation, 3));
    const std::size_t idx[] = {0, 1};
    TrainOptions o;
    o.batch_size = 2;
    o.adam.lr = 1e-5;
    Dataset two = data;
    two.samples.resize(2);
    const double before = batch_loss(g, two, idx, Mode::train).item();
    train(g, two, o);
    CHECK(batch_loss(g, two, idx, Mode::train).item() < before);
  }
  SUBCASE("loss decreases over 200 steps") {
    auto eight = synth_segmentation_dataset(8, 16, 3, 4);
    Generator g(tiny_model(Task::segmentation, 3));
    TrainOptions o;
    o.batch_size = 4;
    o.epochs = 100;
    const std::size_t all[] = {0, 1, 2, 3, 4, 5, 6, 7};
    const double start = batch_loss(g, eight, all, Mode::train).item();
    auto r = train(g, eight, o);
    CHECK(r.log.size() == 200);
    CHECK(batch_loss(g, eight, all, Mode::train).item() < start);
  }
  SUBCASE("regression with mae") {
    auto depth = synth_depth_dataset(4, 16, 2);
    Generator g(tiny_model(Task::regression, 1));
    TrainOptions o;
    o.batch_size = 2;
    o.epochs = 2;
    auto r = train(g, depth, o);
    CHECK(r.log.size() == 4);
    for (const auto& rec : r.log) CHECK(rec.loss <= 2.0);
  }
  SUBCASE("non-finite loss aborts with the batch") {
    Dataset bad = data;
    bad.samples[2].input = bad.samples[2].input.clone();
    bad.samples[2].input.mutable_data()[5] = std::numeric_limits<double>::quiet_NaN();
    Generator g(tiny_model(Task::segmentation, 3));
    TrainOptions o;
    o.batch_size = 4;
    CHECK_THROWS_WITH_AS(train(g, bad, o), doctest::Contains("shapes_2"), NumericError);
  }
  SUBCASE("incompatible model") {
    Generator reg(tiny_model(Task::regression, 3));
    CHECK_THROWS_AS(train(reg, data, {}), ConfigError);
    Generator wide(tiny_model(Task::segmentation, 4));
    CHECK_THROWS_AS(train(wide, data, {}), ConfigError);
  }
  SUBCASE("log file and checkpoint") {
    const auto dir = std::filesystem::temp_directory_path() / "t2i_test_trainlog";
    std::filesystem::create_directories(dir);
    const auto log = (dir / "train_log.txt").string(), ckpt = (dir / "model.ckpt").string();
    std::filesystem::remove(log);
    Generator g(tiny_model(Task::segmentation, 3));
    TrainOptions o;
    o.batch_size = 2;
    o.log_path = log;
    o.checkpoint_path = ckpt;
    train(g, data, o);
    std::ifstream in(log);
    std::size_t step;
    double loss, ms;
    std::size_t lines = 0;
    while (in >> step >> loss >> ms) CHECK(step == ++lines);
    CHECK(lines == 2);
    auto loaded = load_checkpoint(ckpt);
    REQUIRE(loaded.optimizer.has_value());
    CHECK(loaded.optimizer->step == 2);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("shuffled indices") {
  auto a = shuffled_indices(10, 1), b = shuffled_indices(10, 1);
  CHECK(a == b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
  CHECK(shuffled_indices(10, 2) != a);
}
