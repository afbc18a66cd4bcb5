#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "doctest.h"
#include "oracles.hpp"
#include "svda/container.hpp"
#include "svda/spectral.hpp"
#include "svda/train.hpp"
#include "tempdir.hpp"

using namespace svda;
using namespace svda::nn;

namespace {

Tensor<float> random_images(std::size_t n, Rng& rng) { return oracle::random_tensor<float>({n, 3, 32, 32}, rng, 0, 255); }

bool same_weights(const LayerGraph& a, const LayerGraph& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].params.size() != b.layers[i].params.size()) return false;
    for (std::size_t k = 0; k < a.layers[i].params.size(); ++k) {
      const auto& x = a.layers[i].params[k];
      const auto& y = b.layers[i].params[k];
      if (x.shape != y.shape || std::memcmp(x.data.data(), y.data.data(), x.size() * sizeof(float)) != 0) return false;
    }
  }
  return true;
}

float max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  REQUIRE(a.shape == b.shape);
  float m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// Two-class set: dark images vs bright images, with noise.
Dataset toy_two_class(std::size_t n, std::uint64_t seed) {
  Dataset d{n, 3, 32, 32, std::vector<std::uint8_t>(n * 3 * 32 * 32), std::vector<int>(n), "toy"};
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<int>(i % 2);
    const double base = d.labels[i] ? 170 : 70;
    for (std::size_t j = 0; j < d.image_size(); ++j)
      d.pixels[i * d.image_size() + j] = static_cast<std::uint8_t>(std::clamp(base + rng.uniform(-60, 60), 0.0, 255.0));
  }
  return d;
}

}  // namespace

TEST_CASE("build_model is deterministic and rejects unknown architectures") {
  CHECK(same_weights(build_model("convnet_a", 10, 7), build_model("convnet_a", 10, 7)));
  CHECK_FALSE(same_weights(build_model("convnet_a", 10, 7), build_model("convnet_a", 10, 8)));
  CHECK_THROWS_WITH_AS(build_model("resnet", 10, 0), doctest::Contains("convnet_a"), std::invalid_argument);
}

TEST_CASE("output shapes follow the architecture table") {
  const std::map<std::string, std::vector<Shape>> table = {
      {"convnet_a", {{3, 32, 32}, {16, 16, 16}, {32, 8, 8}, {32, 8, 8}, {64, 4, 4}, {64}, {10}}},
      {"convnet_b", {{3, 32, 32}, {12, 16, 16}, {24, 8, 8}, {48, 8, 8}, {48, 4, 4}, {48}, {10}}},
      {"convnet_c", {{3, 32, 32}, {16, 16, 16}, {16, 8, 8}, {32, 8, 8}, {32, 4, 4}, {32}, {32}, {10}}},
  };
  Rng rng(1);
  const auto x = random_images(2, rng);
  for (const auto& [arch, shapes] : table) {
    const auto m = build_model(arch, 10, 3);
    REQUIRE(m.layers.size() == shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      INFO(arch << " " << m.layers[i].name);
      CHECK(m.layers[i].out_shape == shapes[i]);
      Shape batched{2};
      batched.insert(batched.end(), shapes[i].begin(), shapes[i].end());
      CHECK(forward_to_layer(m, x, m.layers[i].name).shape == batched);
    }
    const auto names = m.layer_names();
    for (auto block : {"block1", "block2", "block3", "block4", "pool", "fc"})
      CHECK(std::find(names.begin(), names.end(), block) != names.end());
  }
}

TEST_CASE("forward_full basics") {
  const auto a = build_model("convnet_a", 10, 7);
  const auto b = build_model("convnet_b", 10, 7);
  Rng rng(2);
  auto x = random_images(1, rng);
  const auto la = forward_full(a, x);
  CHECK(la.shape == Shape{1, 10});
  CHECK(max_abs_diff(la, forward_full(b, x)) > 1e-3f);

  CHECK(forward_full(a, Tensor<float>::zeros({1, 3, 32, 32})).all_finite());

  Tensor<float> twice = Tensor<float>::zeros({2, 3, 32, 32});
  std::copy(x.data.begin(), x.data.end(), twice.data.begin());
  std::copy(x.data.begin(), x.data.end(), twice.data.begin() + 3072);
  const auto l2 = forward_full(a, twice);
  for (int c = 0; c < 10; ++c) CHECK(l2.data[c] == l2.data[10 + c]);

  CHECK_THROWS_WITH_AS(forward_full(a, Tensor<float>::zeros({1, 3, 28, 28})), doctest::Contains("1x3x28x28"),
                       std::invalid_argument);
}

TEST_CASE("split forward identity at every layer") {
  for (auto arch : kArchs) {
    const auto m = build_model(arch, 10, 11);
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
      const auto x = random_images(1, rng);
      const auto full = forward_full(m, x);
      for (const auto& name : m.layer_names()) {
        const auto f = forward_to_layer(m, x, name);
        CHECK(max_abs_diff(forward_from_layer(m, f, name), full) <= 1e-6f);
      }
    }
  }
}

TEST_CASE("forward_to_layer and forward_from_layer contracts") {
  const auto m = build_model("convnet_c", 10, 4);
  Rng rng(9);
  const auto x = random_images(3, rng);
  CHECK(max_abs_diff(forward_to_layer(m, x, "fc"), forward_full(m, x)) == 0.0f);
  for (auto name : {"block1", "block2", "block3", "block4", "pool", "hidden"}) {
    const auto f = forward_to_layer(m, x, name);
    CHECK(std::all_of(f.data.begin(), f.data.end(), [](float v) { return v >= 0.0f; }));
  }
  CHECK_THROWS_WITH_AS(forward_to_layer(m, x, "block9"), doctest::Contains("block1, block2"), std::invalid_argument);

  CHECK(forward_from_layer(m, Tensor<float>::zeros({1, 32, 8, 8}), "block3").all_finite());
  CHECK_THROWS_WITH_AS(forward_from_layer(m, Tensor<float>::zeros({1, 16, 8, 8}), "block3"),
                       doctest::Contains("block3"), std::invalid_argument);
}

TEST_CASE("forward_from_layer on a full-rank reconstruction matches forward_full") {
  for (auto arch : kArchs) {
    const auto m = build_model(arch, 10, 21);
    Rng rng(13);
    const auto x = random_images(2, rng);
    Graph<float> g;
    Bound<float> b(m, g);
    const Var feat = b.to_layer(g.constant(x), "block3");
    const auto& fs = g.value(feat).shape;
    const std::size_t full_rank = std::min(fs[1], fs[2] * fs[3]);
    const Var z = spectral::svd_truncate(g, feat, spectral::TruncationSpec{full_rank});
    CHECK(max_abs_diff(g.value(b.from_layer(z, "block3")), forward_full(m, x)) <= 1e-5f);
  }
}

TEST_CASE("predict agrees across worker counts") {
  const auto m = build_model("convnet_b", 10, 1);
  Rng rng(3);
  const auto x = random_images(7, rng);
  const auto logits = forward_full(m, x);
  const auto p1 = predict(m, x, 1), p3 = predict(m, x, 3);
  CHECK(p1 == p3);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto* row = logits.data.data() + i * 10;
    CHECK(p1[i] == std::max_element(row, row + 10) - row);
  }
}

TEST_CASE("training") {
  const auto toy = toy_two_class(200, 17);
  TrainOptions opt;
  opt.seed = 5;

  SUBCASE("zero epochs leaves the initialization") {
    auto m = build_model("convnet_b", 2, 3);
    opt.epochs = 0;
    train(m, toy, nullptr, opt);
    CHECK(same_weights(m, build_model("convnet_b", 2, 3)));
  }
  SUBCASE("separable toy set reaches high accuracy, deterministically") {
    opt.epochs = 20;
    auto m1 = build_model("convnet_b", 2, 3);
    auto m2 = build_model("convnet_b", 2, 3);
    const auto r1 = train(m1, toy, &toy, opt);
    const auto r2 = train(m2, toy, &toy, opt);
    REQUIRE(r1.metrics.size() == 20);
    CHECK(r1.metrics.back().train_acc >= 0.95);
    CHECK(accuracy(m1, toy) >= 0.95);
    CHECK(same_weights(m1, m2));
    for (std::size_t e = 0; e < 20; ++e) {
      CHECK(r1.metrics[e].loss == r2.metrics[e].loss);
      CHECK(r1.metrics[e].test_acc == r2.metrics[e].test_acc);
    }
  }
  SUBCASE("invalid datasets are rejected") {
    auto m = build_model("convnet_b", 2, 3);
    Dataset empty{0, 3, 32, 32, {}, {}, "empty"};
    CHECK_THROWS_AS(train(m, empty, nullptr, opt), std::invalid_argument);
    auto bad = toy;
    bad.labels[4] = 2;
    CHECK_THROWS_WITH_AS(train(m, bad, nullptr, opt), doctest::Contains("label overflow"), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round trip and diagnostics") {
  TempDir dir("ckpt");
  auto m = build_model("convnet_c", 10, 99);
  TrainingInfo info{3, 42, 0.875};
  save_checkpoint(m, info, dir / "a.svda");

  TrainingInfo back;
  const auto loaded = load_checkpoint(dir / "a.svda", &back);
  CHECK(loaded.arch == "convnet_c");
  CHECK(same_weights(m, loaded));
  CHECK(back.epochs == 3);
  CHECK(back.seed == 42);
  CHECK(back.final_test_acc == doctest::Approx(0.875));

  save_checkpoint(loaded, back, dir / "b.svda");
  CHECK(io::read_bytes(dir / "a.svda") == io::read_bytes(dir / "b.svda"));

  auto bytes = io::read_bytes(dir / "a.svda");
  auto write = [&](const std::string& name, const std::vector<std::uint8_t>& b) {
    io::write_bytes_atomic(dir / name, b);
    return dir / name;
  };
  auto kind_of = [](const std::filesystem::path& p) {
    try {
      load_checkpoint(p);
    } catch (const io::FormatError& e) {
      return e.kind();
    }
    FAIL("expected a FormatError");
    return io::FormatError::Kind::io;
  };

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(write("magic.svda", bad_magic)) == io::FormatError::Kind::bad_magic);
  CHECK_THROWS_WITH(load_checkpoint(dir / "magic.svda"), doctest::Contains("bad magic"));

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(kind_of(write("version.svda", bad_version)) == io::FormatError::Kind::bad_version);

  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  CHECK(kind_of(write("trunc.svda", truncated)) == io::FormatError::Kind::truncated);

  // Drop the fc layer's blobs: layer count no longer matches the architecture.
  auto blobs = io::decode(bytes);
  std::erase_if(blobs, [](const io::Blob& b) { return b.name.rfind("fc.", 0) == 0; });
  io::save(dir / "short.svda", blobs);
  CHECK(kind_of(dir / "short.svda") == io::FormatError::Kind::structural);
  CHECK_THROWS_WITH(load_checkpoint(dir / "short.svda"), doctest::Contains("'fc'"));

  auto extra = io::decode(bytes);
  extra.push_back(io::Blob::f32("block5.weight", Tensor<float>::zeros({2, 2})));
  io::save(dir / "extra.svda", extra);
  CHECK_THROWS_WITH(load_checkpoint(dir / "extra.svda"), doctest::Contains("block5"));

  auto reshaped = io::decode(bytes);
  for (auto& b : reshaped)
    if (b.name == "block2.bias") b = io::Blob::f32("block2.bias", Tensor<float>::zeros({3}));
  io::save(dir / "shape.svda", reshaped);
  CHECK_THROWS_WITH(load_checkpoint(dir / "shape.svda"), doctest::Contains("block2"));
}

TEST_CASE("container encodes every dtype and rejects trailing garbage") {
  std::vector<io::Blob> blobs{io::Blob::f32("w", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, -6.5f})),
                              io::Blob::u32("ids", {7, 0, 4000000000u}), io::Blob::text("note", "hello"),
                              io::Blob::u8("raw", {2, 2}, {1, 2, 3, 255})};
  auto bytes = io::encode(blobs);
  const auto back = io::decode(bytes);
  REQUIRE(back.size() == 4);
  CHECK(back[0].as_f32().data == blobs[0].as_f32().data);
  CHECK(back[0].dims == Shape{2, 3});
  CHECK(back[1].as_u32() == std::vector<std::uint32_t>{7, 0, 4000000000u});
  CHECK(back[2].as_text() == "hello");
  CHECK(back[3].bytes == std::vector<std::uint8_t>{1, 2, 3, 255});
  CHECK(io::encode(back) == bytes);
  // Header layout: magic, version, count, then the first blob's name length.
  CHECK(std::memcmp(bytes.data(), "SVDA", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 4);
  CHECK(bytes[12] == 1);
  CHECK(bytes[14] == 'w');

  bytes.push_back(0);
  CHECK_THROWS_AS(io::decode(bytes), io::FormatError);
  CHECK_THROWS_AS(back[2].as_f32(), io::FormatError);
}
