#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include "eggscan/classifier.hpp"
#include "eggscan/rng.hpp"
#include "test_util.hpp"

using namespace eggscan;
using eggscan::testing::TempDir;
using eggscan::testing::constant_image;

TEST_CASE("class probabilities validate sum and range", "[classifier]") {
  ClassProbabilities p;
  p.p = {0.2, 0.2, 0.2, 0.2, 0.2};
  CHECK_NOTHROW(p.check_valid());
  p.p = {0.5, 0.2, 0.2, 0.2, 0.2};
  CHECK_THROWS_AS(p.check_valid(), invalid_input);
  p.p = {1.2, -0.2, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(p.check_valid(), invalid_input);
}

TEST_CASE("argmax breaks ties toward the first class", "[classifier]") {
  ClassProbabilities p;
  p.p = {0.3, 0.3, 0.2, 0.1, 0.1};
  CHECK(p.argmax() == EggClass::AL);
  p.p = {0.1, 0.2, 0.3, 0.3, 0.1};
  CHECK(p.argmax() == EggClass::FB);
}

TEST_CASE("resize_patch at the source side is the identity", "[classifier]") {
  ImageBuffer patch(100, 100, 1);
  Rng rng(1);
  for (auto& px : patch.pixels)
    px = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  CHECK(resize_patch(patch, 100) == patch);
}

TEST_CASE("resize_patch keeps constants constant", "[classifier]") {
  const ImageBuffer patch = constant_image(100, 100, 1, 77);
  for (int side : {7, 32, 224, 227}) {
    const ImageBuffer out = resize_patch(patch, side);
    REQUIRE(out.width == side);
    REQUIRE(out.height == side);
    for (auto px : out.pixels) CHECK(px == 77);
  }
}

TEST_CASE("resize_patch rejects bad targets and channel counts",
          "[classifier]") {
  CHECK_THROWS_AS(resize_patch(constant_image(10, 10, 1, 0), 0), invalid_input);
  CHECK_THROWS_AS(resize_patch(constant_image(10, 10, 3, 0), 5), invalid_input);
}

TEST_CASE("softmax of zero logits is uniform", "[classifier]") {
  const std::vector<double> logits(5, 0.0);
  const auto p = softmax(logits);
  for (double v : p) CHECK(v == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("softmax matches hand-computed distribution", "[classifier]") {
  const std::vector<double> logits = {std::log(2.0), 0.0, 0.0, 0.0, 0.0};
  const auto p = softmax(logits);
  CHECK(p[0] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  for (int c = 1; c < 5; ++c)
    CHECK(p[c] == Catch::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant", "[classifier]") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(5), shifted(5);
    const double c = rng.uniform(-50.0, 50.0);
    for (int i = 0; i < 5; ++i) {
      logits[i] = rng.uniform(-5.0, 5.0);
      shifted[i] = logits[i] + c;
    }
    const auto a = softmax(logits);
    const auto b = softmax(shifted);
    for (int i = 0; i < 5; ++i)
      CHECK(a[i] == Catch::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero-initialized model yields uniform probabilities and ln 5 loss",
          "[classifier]") {
  Mlp net(4, 3, 5);
  const std::vector<float> x = {0.1f, 0.9f, 0.4f, 0.2f};
  const int label = 2;
  std::vector<double> probs(5);
  const double loss = net.run_batch(x, 1, &label, probs.data(), nullptr);
  for (double v : probs) CHECK(v == Catch::Approx(0.2).margin(1e-15));
  CHECK(loss == Catch::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("sgdm with zero momentum is plain gradient descent", "[classifier]") {
  Rng rng(14);
  std::vector<double> w(10), v(10, 0.0), g(10);
  for (int i = 0; i < 10; ++i) {
    w[i] = rng.uniform(-1.0, 1.0);
    g[i] = rng.uniform(-1.0, 1.0);
  }
  std::vector<double> expected = w;
  for (int i = 0; i < 10; ++i) expected[i] -= 0.05 * g[i];
  sgdm_update(w, v, g, 0.05, 0.0);
  for (int i = 0; i < 10; ++i) CHECK(w[i] == expected[i]);
}

TEST_CASE("sgdm two-step trace matches the hand computation", "[classifier]") {
  std::vector<double> w = {1.0}, v = {0.0};
  const std::vector<double> g = {0.5};
  sgdm_update(w, v, g, 0.1, 0.9);
  CHECK(v[0] == Catch::Approx(-0.05).margin(1e-12));
  CHECK(w[0] == Catch::Approx(0.95).margin(1e-12));
  sgdm_update(w, v, g, 0.1, 0.9);
  CHECK(v[0] == Catch::Approx(-0.095).margin(1e-12));
  CHECK(w[0] == Catch::Approx(0.855).margin(1e-12));
}

TEST_CASE("sgdm rejects non-finite gradients and shape mismatches",
          "[classifier]") {
  std::vector<double> w = {1.0}, v = {0.0};
  std::vector<double> g = {std::nan("")};
  CHECK_THROWS_AS(sgdm_update(w, v, g, 0.1, 0.9), error);
  std::vector<double> g2 = {0.1, 0.2};
  CHECK_THROWS_AS(sgdm_update(w, v, g2, 0.1, 0.9), invalid_input);
}

TEST_CASE("analytic gradients match central finite differences",
          "[classifier]") {
  // 6-parameter micro-model: 1 -> 1 -> 2
  Mlp net(1, 1, 2);
  Rng rng(99);
  const double h = 1e-5;
  for (int point = 0; point < 50; ++point) {
    for (double& p : net.params()) p = rng.uniform(-2.0, 2.0);
    const float x = static_cast<float>(rng.uniform(0.0, 1.0));
    const int label = rng.uniform_int(0, 1);
    std::vector<double> analytic(net.param_count());
    net.run_batch(std::span<const float>(&x, 1), 1, &label, nullptr,
                  analytic.data());
    for (std::size_t i = 0; i < net.param_count(); ++i) {
      const double saved = net.params()[i];
      net.params()[i] = saved + h;
      const double up =
          net.run_batch(std::span<const float>(&x, 1), 1, &label, nullptr,
                        nullptr);
      net.params()[i] = saved - h;
      const double down =
          net.run_batch(std::span<const float>(&x, 1), 1, &label, nullptr,
                        nullptr);
      net.params()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale =
          std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      CHECK(std::abs(analytic[i] - numeric) / scale < 1e-4);
    }
  }
}

TEST_CASE("checkpoint selection takes the first minimum", "[classifier]") {
  std::vector<EpochStats> epochs(5);
  epochs[0].val_loss = 1.0;
  epochs[1].val_loss = 0.4;
  epochs[2].val_loss = 0.6;
  epochs[3].val_loss = 0.4;
  epochs[4].val_loss = 0.9;
  CHECK(select_checkpoint(epochs) == 1);
  epochs[3].val_loss = 0.3;
  CHECK(select_checkpoint(epochs) == 3);
  CHECK_THROWS_AS(select_checkpoint({}), invalid_input);
}

TEST_CASE("validation split size rounds half up", "[classifier]") {
  CHECK(detail::validation_count(50000, 0.3) == 15000u);
  CHECK(detail::validation_count(5, 0.3) == 2u);  // round(1.5) half up
  CHECK(detail::validation_count(10, 0.25) == 3u);  // round(2.5) half up
}

namespace {

// Two trivially separable classes: dark patches are AL, bright are HD.
std::vector<LabeledPatch> toy_set(int per_class, std::uint64_t seed) {
  std::vector<LabeledPatch> set;
  Rng rng(seed);
  for (int i = 0; i < per_class; ++i) {
    LabeledPatch dark;
    dark.patch = constant_image(8, 8, 1,
                                static_cast<std::uint8_t>(rng.uniform_int(20, 70)));
    dark.label = EggClass::AL;
    set.push_back(std::move(dark));
    LabeledPatch bright;
    bright.patch = constant_image(
        8, 8, 1, static_cast<std::uint8_t>(rng.uniform_int(180, 230)));
    bright.label = EggClass::HD;
    set.push_back(std::move(bright));
  }
  return set;
}

}  // namespace

TEST_CASE("training separates a linearly separable toy set", "[classifier]") {
  TrainConfig config;
  config.learning_rate = 0.05;
  config.batch_size = 20;
  config.max_epochs = 20;
  config.seed = 7;
  const auto result = train(toy_set(100, 1), config, 8, 4);
  REQUIRE(result.history.epochs.size() == 20u);
  double best_acc = 0.0;
  for (const EpochStats& e : result.history.epochs)
    best_acc = std::max(best_acc, e.train_accuracy);
  CHECK(best_acc >= 0.99);
  CHECK(result.history.selected_epoch ==
        select_checkpoint(result.history.epochs));
}

TEST_CASE("training is deterministic given the seed", "[classifier]") {
  TrainConfig config;
  config.learning_rate = 0.05;
  config.batch_size = 20;
  config.max_epochs = 5;
  config.seed = 11;
  const auto a = train(toy_set(40, 2), config, 8, 4);
  const auto b = train(toy_set(40, 2), config, 8, 4);
  REQUIRE(a.model.net.params().size() == b.model.net.params().size());
  for (std::size_t i = 0; i < a.model.net.params().size(); ++i)
    CHECK(a.model.net.params()[i] == b.model.net.params()[i]);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    CHECK(a.history.epochs[e].train_loss == b.history.epochs[e].train_loss);
    CHECK(a.history.epochs[e].val_loss == b.history.epochs[e].val_loss);
  }
}

TEST_CASE("training rejects single-class and undersized sets", "[classifier]") {
  TrainConfig config;
  config.batch_size = 10;
  std::vector<LabeledPatch> mono;
  for (int i = 0; i < 30; ++i) {
    LabeledPatch lp;
    lp.patch = constant_image(8, 8, 1, 100);
    lp.label = EggClass::FB;
    mono.push_back(std::move(lp));
  }
  CHECK_THROWS_AS(train(mono, config, 8, 4), config_error);
  CHECK_THROWS_AS(train(toy_set(2, 3), config, 8, 4), config_error);
}

TEST_CASE("permuting class labels permutes the trained distribution",
          "[classifier]") {
  // swap AL (0) and FB (2) in the labels; outputs must swap identically
  auto base = toy_set(60, 5);
  auto permuted = base;
  for (LabeledPatch& lp : permuted) {
    if (lp.label == EggClass::AL) lp.label = EggClass::FB;
  }
  TrainConfig config;
  config.learning_rate = 0.05;
  config.batch_size = 20;
  config.max_epochs = 8;
  config.seed = 21;
  const auto a = train(base, config, 8, 4);
  const auto b = train(permuted, config, 8, 4);

  const ImageBuffer probe = constant_image(8, 8, 1, 45);
  std::vector<std::uint8_t> bytes(probe.pixels.begin(), probe.pixels.end());
  const auto pa = a.model.classify_raw(bytes, 1).front();
  const auto pb = b.model.classify_raw(bytes, 1).front();
  CHECK(pb.p[2] == Catch::Approx(pa.p[0]).margin(1e-9));
  CHECK(pb.p[0] == Catch::Approx(pa.p[2]).margin(1e-9));
  CHECK(pb.p[1] == Catch::Approx(pa.p[1]).margin(1e-9));
  CHECK(pb.p[3] == Catch::Approx(pa.p[3]).margin(1e-9));
  CHECK(pb.p[4] == Catch::Approx(pa.p[4]).margin(1e-9));
}

TEST_CASE("model serialization round-trips through float32", "[classifier]") {
  TrainConfig config;
  config.learning_rate = 0.05;
  config.batch_size = 20;
  config.max_epochs = 3;
  config.seed = 31;
  const auto result = train(toy_set(40, 9), config, 8, 4);

  TempDir dir("model");
  const std::string path = dir.str("model.bin");
  save_model(result.model, path, {config.seed, result.history.selected_epoch});

  ModelMeta meta;
  const ReferenceModel loaded = load_model(path, &meta);
  CHECK(meta.seed == config.seed);
  CHECK(meta.selected_epoch == result.history.selected_epoch);
  CHECK(loaded.input_side == 8);
  REQUIRE(loaded.net.param_count() == result.model.net.param_count());
  for (std::size_t i = 0; i < loaded.net.param_count(); ++i)
    CHECK(loaded.net.params()[i] ==
          static_cast<double>(static_cast<float>(result.model.net.params()[i])));

  // f32 quantization must not change predictions materially
  const ImageBuffer probe = constant_image(8, 8, 1, 200);
  std::vector<std::uint8_t> bytes(probe.pixels.begin(), probe.pixels.end());
  const auto pa = result.model.classify_raw(bytes, 1).front();
  const auto pb = loaded.classify_raw(bytes, 1).front();
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(pb.p[c] == Catch::Approx(pa.p[c]).margin(1e-5));
}

TEST_CASE("load_model rejects truncated parameter files", "[classifier]") {
  TrainConfig config;
  config.learning_rate = 0.05;
  config.batch_size = 20;
  config.max_epochs = 2;
  config.seed = 41;
  const auto result = train(toy_set(40, 10), config, 8, 4);
  TempDir dir("model-bad");
  const std::string path = dir.str("model.bin");
  save_model(result.model, path, {});
  // chop the binary in half
  {
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
  }
  CHECK_THROWS_AS(load_model(path), io_error);
}

TEST_CASE("classify_raw validates byte counts", "[classifier]") {
  ReferenceModel model;
  model.input_side = 8;
  model.net = Mlp(64, 4, kNumClasses);
  std::vector<std::uint8_t> bytes(64 * 2 + 1, 0);
  CHECK_THROWS_AS(model.classify_raw(bytes, 2), invalid_input);
}
