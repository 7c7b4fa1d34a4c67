#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "aniformer/errors.hpp"
#include "aniformer/loss.hpp"
#include "aniformer/model.hpp"
#include "aniformer/ops.hpp"
#include "aniformer/synth.hpp"
#include "test_support.hpp"

using namespace aniformer;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.extractor_widths = {8, 8, 8};
  c.encoder_widths = {8, 8, 4, 4};
  return c;
}

template <typename Real>
void fill(Tensor<Real> t, double value) {
  for (Real& v : t.mutable_data()) v = static_cast<Real>(value);
}

template <typename Real>
void set_gammas(AniFormer<Real>& model, double base) {
  for (std::size_t e = 0; e < model.config().encoder_widths.size(); ++e) {
    fill(model.parameter("encoder." + std::to_string(e) + ".gamma"), base + 0.1 * static_cast<double>(e));
  }
}

// out[..., perm[i]] = in[..., i] along the last axis.
Tensor<double> permute_last(const Tensor<double>& x, const std::vector<std::uint32_t>& perm) {
  const std::size_t v = x.extent(-1);
  std::vector<double> out(x.size());
  const auto d = x.data();
  for (std::size_t r = 0; r < x.size() / v; ++r)
    for (std::size_t i = 0; i < v; ++i) out[r * v + perm[i]] = d[r * v + i];
  return Tensor<double>(x.shape(), std::move(out));
}

std::vector<std::uint32_t> shuffled(std::size_t n, unsigned seed) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  std::shuffle(p.begin(), p.end(), std::mt19937(seed));
  return p;
}

SynthConfig toy_synth() {
  SynthConfig c;
  c.bone_count = 2;
  c.rings_per_bone = 1;
  c.ring_resolution = 11;
  return c;
}

MeshSequence repeat_frames(const MeshSequence& seq, std::size_t count) {
  MeshSequence out;
  out.faces = seq.faces;
  for (std::size_t i = 0; i < count; ++i) out.frames.push_back(seq.frames[i % seq.frames.size()]);
  return out;
}

}  // namespace

TEST_CASE("config validation and names") {
  CHECK_NOTHROW(ModelConfig{}.validate());
  ModelConfig c;
  c.extractor_widths = {16, 32, 48};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.max_frames = 2;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.regression_head = true;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(parse_softmax_axis("key") == SoftmaxAxis::kKey);
  CHECK(parse_softmax_axis(to_string(SoftmaxAxis::kQuery)) == SoftmaxAxis::kQuery);
  CHECK_THROWS_AS(parse_softmax_axis("rows"), ValidationError);
}

TEST_CASE("parameter inventory and initialization") {
  const ModelConfig c;
  const AniFormer<double> model(c, 3);
  // Independent count: extractor 3->16->32->64, embedding 3x64, four encoders.
  std::size_t expect = (3 * 16 + 16) + (16 * 32 + 32) + (32 * 64 + 64) + 3 * 64;
  std::size_t in = 64;
  for (std::size_t w : c.encoder_widths) {
    expect += in * w + w;                   // width map
    expect += 3 * (w * w + w) + 1;          // q, k, v, gamma
    expect += 3 * (2 * (3 * w + w) + w * w + w);  // three modulated blocks
    in = w;
  }
  expect += 16 * 3 + 3;
  CHECK(model.parameter_count() == expect);

  CHECK(model.parameter("encoder.2.gamma").item() == 0.0);
  for (const auto& [name, value] : model.parameters()) {
    const bool bias = name.size() > 5 && name.substr(name.size() - 5) == ".bias";
    const double bound = name == "embedding" ? 1.0 / 8.0 : (value.rank() == 2 ? 1.0 / std::sqrt(double(value.extent(1))) : 0.0);
    for (double v : value.data()) {
      if (bias || name.find("gamma") != std::string::npos) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= bound);
      }
    }
  }
  CHECK_THROWS_AS(model.parameter("encoder.9.q.weight"), ContractError);

  const AniFormer<double> same(c, 3);
  const AniFormer<double> other(c, 4);
  CHECK(max_abs_diff(model.parameter("map.1.weight").data(), same.parameter("map.1.weight").data()) == 0.0);
  CHECK(max_abs_diff(model.parameter("map.1.weight").data(), other.parameter("map.1.weight").data()) > 0.0);
}

TEST_CASE("extract_features examples") {
  AniFormer<double> model(ModelConfig{}, 5);
  fill(model.parameter("embedding"), 0.0);
  {
    const auto table = model.parameter("embedding").mutable_data();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : table) v = u(rng);
  }
  SUBCASE("identical frames differ only by the embedding difference") {
    const Tensor<double> frame = random_tensor({1, 1, 3, 10}, 2);
    std::vector<double> rep;
    for (int t = 0; t < 3; ++t) rep.insert(rep.end(), frame.data().begin(), frame.data().end());
    const Tensor<double> z = model.extract_features(Tensor<double>({1, 3, 3, 10}, rep), 10);
    const auto e = model.parameter("embedding").data();
    const auto d = z.data();
    double worst = 0;
    for (std::size_t c = 0; c < 64; ++c)
      for (std::size_t v = 0; v < 10; ++v) {
        const double diff = d[(1 * 64 + c) * 10 + v] - d[(0 * 64 + c) * 10 + v];
        worst = std::max(worst, std::abs(diff - (e[64 + c] - e[c])));
      }
    CHECK(worst < 1e-12);
  }
  SUBCASE("zero extractor gives the broadcast embedding") {
    for (const auto& [name, value] : model.parameters()) {
      if (name.rfind("extractor.", 0) == 0) fill(value, 0.0);
    }
    const Tensor<double> z = model.extract_features(random_tensor({1, 3, 3, 7}, 3), 7);
    const auto e = model.parameter("embedding").data();
    const auto d = z.data();
    double worst = 0;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 64; ++c)
        for (std::size_t v = 0; v < 7; ++v) worst = std::max(worst, std::abs(d[(t * 64 + c) * 7 + v] - e[t * 64 + c]));
    CHECK(worst == 0.0);
  }
  SUBCASE("shape contract and pooling") {
    CHECK(model.extract_features(random_tensor({1, 3, 3, 300}, 4), 300).shape() == Shape{1, 3, 64, 300});
    CHECK(model.extract_features(random_tensor({1, 3, 3, 300}, 4), 120).shape() == Shape{1, 3, 64, 120});
  }
  SUBCASE("more frames than the embedding holds") {
    CHECK_THROWS_AS(model.extract_features(random_tensor({1, 4, 3, 10}, 5), 10), ContractError);
  }
}

TEST_CASE("attention examples") {
  AniFormer<double> model(small_config(), 6);
  const Tensor<double> z = random_tensor({1, 3, 8, 12}, 7);

  SUBCASE("zero gamma is the identity") {
    const Tensor<double> out = model.attention(0, z);
    CHECK(max_abs_diff(out.data(), z.data()) == 0.0);
  }
  SUBCASE("one vertex attends to itself") {
    fill(model.parameter("encoder.1.gamma"), 0.7);
    const Tensor<double> z1 = random_tensor({1, 3, 8, 1}, 8);
    const Tensor<double> v =
        pointwise_linear(z1, model.parameter("encoder.1.v.weight"), model.parameter("encoder.1.v.bias"));
    std::vector<double> expect(z1.size());
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = 0.7 * v.data()[i] + z1.data()[i];
    CHECK(max_abs_diff(model.attention(1, z1).data(), std::span<const double>(expect)) < 1e-15);
  }
  SUBCASE("normalization axis sums to one") {
    for (SoftmaxAxis axis : {SoftmaxAxis::kKey, SoftmaxAxis::kQuery}) {
      ModelConfig c = small_config();
      c.softmax_axis = axis;
      AniFormer<double> m(c, 9);
      set_gammas(m, 0.5);
      ForwardOptions<double> options;
      std::size_t calls = 0;
      double worst = 0;
      options.trace = [&](std::size_t, const Tensor<double>& a) {
        ++calls;
        const std::size_t v = a.extent(-1);
        const auto d = a.data();
        for (std::size_t b = 0; b < a.size() / (v * v); ++b)
          for (std::size_t i = 0; i < v; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < v; ++j) {
              s += axis == SoftmaxAxis::kKey ? d[b * v * v + i * v + j] : d[b * v * v + j * v + i];
            }
            worst = std::max(worst, std::abs(s - 1.0));
          }
      };
      m.forward(random_tensor({1, 3, 3, 12}, 10), random_tensor({1, 1, 3, 12}, 11), options);
      CHECK(calls == 4);
      CHECK(worst < 1e-6);
    }
  }
  SUBCASE("key axis output is v times A transposed") {
    fill(model.parameter("encoder.0.gamma"), 1.0);
    Tensor<double> a;
    ForwardOptions<double> options;
    options.trace = [&](std::size_t, const Tensor<double>& t) { a = t; };
    const Tensor<double> out = model.attention(0, z, options);
    const Tensor<double> v =
        pointwise_linear(z, model.parameter("encoder.0.v.weight"), model.parameter("encoder.0.v.bias"));
    double worst = 0;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 0; i < 12; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < 12; ++j) s += v.data()[(t * 8 + c) * 12 + j] * a.data()[(t * 12 + i) * 12 + j];
          const std::size_t idx = (t * 8 + c) * 12 + i;
          worst = std::max(worst, std::abs(out.data()[idx] - (s + z.data()[idx])));
        }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("multi-head attention splits channels") {
  ModelConfig c = small_config();
  c.heads = 2;
  AniFormer<double> model(c, 12);
  set_gammas(model, 0.4);
  std::vector<Shape> shapes;
  ForwardOptions<double> options;
  options.trace = [&](std::size_t, const Tensor<double>& a) { shapes.push_back(a.shape()); };
  const Tensor<double> out = model.forward(random_tensor({1, 3, 3, 9}, 13), random_tensor({1, 1, 3, 9}, 14), options);
  CHECK(out.shape() == Shape{1, 3, 3, 9});
  REQUIRE(shapes.size() == 4);
  CHECK(shapes[0] == Shape{1, 3, 2, 9, 9});
}

TEST_CASE("insnorm_modulate examples") {
  AniFormer<double> model(small_config(), 15);
  const Tensor<double> z = random_tensor({1, 3, 8, 10}, 16);
  const Tensor<double> target = random_tensor({1, 1, 3, 10}, 17);
  const std::string p = "encoder.0.main1";

  SUBCASE("neutral modulation is plain instance norm") {
    fill(model.parameter(p + ".scale.weight"), 0.0);
    fill(model.parameter(p + ".scale.bias"), 1.0);
    fill(model.parameter(p + ".shift.weight"), 0.0);
    fill(model.parameter(p + ".shift.bias"), 0.0);
    CHECK(max_abs_diff(model.insnorm_modulate(p, z, target).data(), instance_norm(z).data()) == 0.0);
  }
  SUBCASE("zero scale and constant shift give the constant") {
    fill(model.parameter(p + ".scale.weight"), 0.0);
    fill(model.parameter(p + ".scale.bias"), 0.0);
    fill(model.parameter(p + ".shift.weight"), 0.0);
    {
      auto b = model.parameter(p + ".shift.bias").mutable_data();
      for (std::size_t c = 0; c < b.size(); ++c) b[c] = 0.25 * static_cast<double>(c) - 1.0;
    }
    const Tensor<double> out = model.insnorm_modulate(p, z, target);
    double worst = 0;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t v = 0; v < 10; ++v)
          worst = std::max(worst, std::abs(out.data()[(t * 8 + c) * 10 + v] - (0.25 * double(c) - 1.0)));
    CHECK(worst == 0.0);
  }
  SUBCASE("joint vertex permutation permutes the output") {
    const auto perm = shuffled(10, 18);
    const Tensor<double> base = model.insnorm_modulate(p, z, target);
    const Tensor<double> moved = model.insnorm_modulate(p, permute_last(z, perm), permute_last(target, perm));
    CHECK(max_abs_diff(moved.data(), permute_last(base, perm).data()) < 1e-12);
  }
  SUBCASE("vertex mismatch") {
    CHECK_THROWS_AS(model.insnorm_modulate(p, z, random_tensor({1, 1, 3, 11}, 19)), DimensionError);
  }
}

TEST_CASE("forward contracts") {
  ModelConfig c = small_config();
  c.output_scale = 0.5;
  AniFormer<double> model(c, 20);
  set_gammas(model, 0.6);
  // Large inputs push the output into tanh saturation territory.
  const Tensor<double> out = model.forward(random_tensor({1, 3, 3, 15}, 21, -50, 50), random_tensor({1, 1, 3, 15}, 22, -50, 50));
  CHECK(out.shape() == Shape{1, 3, 3, 15});
  for (double v : out.data()) {
    CHECK(v > -0.5);
    CHECK(v < 0.5);
  }
  CHECK_THROWS_AS(model.forward(random_tensor({1, 2, 3, 15}, 23), random_tensor({1, 1, 3, 15}, 24)), ContractError);
  CHECK_THROWS_AS(model.forward(random_tensor({1, 3, 15}, 23), random_tensor({1, 1, 3, 15}, 24)), DimensionError);

  // Pooled path: driving with more vertices than the target.
  CHECK(model.forward(random_tensor({1, 3, 3, 40}, 25), random_tensor({1, 1, 3, 15}, 26)).shape() ==
        Shape{1, 3, 3, 15});
}

TEST_CASE("joint permutation equivariance of the full forward") {
  const SynthConfig sc = toy_synth();
  const SamplePair pair = make_pair(1, 2, 3, 4, sc, 3);
  AniFormer<double> model(small_config(), 27);
  set_gammas(model, 0.5);
  const Tensor<double> d = sequence_tensor<double>(pair.driving);
  const Tensor<double> n = mesh_tensor<double>(pair.target);
  const auto perm = shuffled(n.extent(-1), 28);
  const Tensor<double> base = model.forward(d, n);
  const Tensor<double> moved = model.forward(permute_last(d, perm), permute_last(n, perm));
  CHECK(max_abs_diff(moved.data(), permute_last(base, perm).data()) < 1e-9);
}

TEST_CASE("zero gamma makes attention contribute nothing") {
  ModelConfig c = small_config();
  AniFormer<double> model(c, 29);
  // Neutral modulation everywhere.
  for (const auto& [name, value] : model.parameters()) {
    if (name.find(".scale.bias") != std::string::npos) fill(value, 1.0);
    if (name.find(".scale.weight") != std::string::npos || name.find(".shift.") != std::string::npos) fill(value, 0.0);
  }
  const Tensor<double> d = random_tensor({1, 3, 3, 11}, 30);
  const Tensor<double> n = random_tensor({1, 1, 3, 11}, 31);
  ForwardOptions<double> ablated;
  ablated.skip_attention = true;
  CHECK(max_abs_diff(model.forward(d, n).data(), model.forward(d, n, ablated).data()) == 0.0);
  set_gammas(model, 0.5);
  CHECK(max_abs_diff(model.forward(d, n).data(), model.forward(d, n, ablated).data()) > 0.0);
}

TEST_CASE("mesh wrappers keep the target topology") {
  const SamplePair pair = make_pair(5, 6, 7, 8, toy_synth(), 3);
  AniFormer<float> model(small_config(), 32);
  const MeshSequence out = animate_window(model, pair.driving, pair.target);
  CHECK(out.frame_count() == 3);
  CHECK(out.faces == pair.target.faces);
  CHECK(out.vertex_count() == pair.target.vertex_count());
  CHECK_NOTHROW(out.validate());
}

TEST_CASE("regression head emits one frame") {
  const SamplePair pair = make_pair(9, 10, 11, 12, toy_synth(), 3);
  ModelConfig c = small_config();
  c.regression_head = true;
  c.vertex_count = pair.target.vertex_count();
  AniFormer<double> model(c, 33);
  CHECK_NOTHROW(model.parameter("head.fc1.weight"));
  CHECK_THROWS_AS(model.parameter("output.weight"), ContractError);
  const Tensor<double> out = model.forward(sequence_tensor<double>(pair.driving), mesh_tensor<double>(pair.target));
  CHECK(out.shape() == Shape{1, 1, 3, c.vertex_count});
  const Mesh m = forward_regression_head(model, pair.driving, pair.target);
  CHECK(m.vertex_count() == c.vertex_count);
  CHECK(m.faces == pair.target.faces);
  CHECK_THROWS_AS(animate_window(model, pair.driving, pair.target), ContractError);
  CHECK_THROWS_AS(model.forward(random_tensor({1, 3, 3, 10}, 1), random_tensor({1, 1, 3, 10}, 2)), DimensionError);

  AniFormer<double> plain(small_config(), 33);
  CHECK_THROWS_AS(forward_regression_head(plain, pair.driving, pair.target), ContractError);
}

TEST_CASE("sliding window examples") {
  CHECK(window_starts(3, 3) == std::vector<std::size_t>{0});
  CHECK(window_starts(7, 3) == std::vector<std::size_t>{0, 3, 6});
  CHECK(window_starts(1, 3) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(window_starts(5, 0), ContractError);

  const SamplePair pair = make_pair(13, 14, 15, 16, toy_synth(), 7);
  AniFormer<double> model(small_config(), 34);
  set_gammas(model, 0.3);
  const MeshSequence out = sliding_window_animate(model, pair.driving, pair.target);
  REQUIRE(out.frame_count() == 7);

  // Windows [0..2], [3..5], [6, 6, 6].
  const std::vector<std::vector<std::size_t>> windows{{0, 1, 2}, {3, 4, 5}, {6, 6, 6}};
  for (std::size_t w = 0; w < windows.size(); ++w) {
    MeshSequence chunk;
    chunk.faces = pair.driving.faces;
    for (std::size_t f : windows[w]) chunk.frames.push_back(pair.driving.frames[f]);
    const MeshSequence piece = animate_window(model, chunk, pair.target);
    for (std::size_t k = 0; k < 3 && 3 * w + k < 7; ++k) CHECK(out.frames[3 * w + k] == piece.frames[k]);
  }
  MeshSequence first;
  first.faces = pair.driving.faces;
  first.frames.assign(pair.driving.frames.begin(), pair.driving.frames.begin() + 3);
  CHECK(sliding_window_animate(model, first, pair.target).frames == animate_window(model, first, pair.target).frames);
}

TEST_CASE("sliding window yields L frames for every L in [1, 40]") {
  const SamplePair pair = make_pair(17, 18, 19, 20, toy_synth(), 5);
  AniFormer<float> model(small_config(), 35);
  for (std::size_t length = 1; length <= 40; ++length) {
    const MeshSequence out = sliding_window_animate(model, repeat_frames(pair.driving, length), pair.target);
    CHECK(out.frame_count() == length);
    CHECK(out.faces == pair.target.faces);
  }
  MeshSequence empty;
  CHECK_THROWS_AS(sliding_window_animate(model, empty, pair.target), ContractError);
}

TEST_CASE("float and double models from one seed agree") {
  const SamplePair pair = make_pair(21, 22, 23, 24, toy_synth(), 3);
  AniFormer<float> f(small_config(), 36);
  AniFormer<double> d(small_config(), 36);
  set_gammas(f, 0.5);
  set_gammas(d, 0.5);
  const MeshSequence a = animate_window(f, pair.driving, pair.target);
  const MeshSequence b = animate_window(d, pair.driving, pair.target);
  double worst = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < a.vertex_count(); ++i)
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(a.frames[t][i][k] - b.frames[t][i][k]));
  CHECK(worst < 1e-4);

  AniFormer<double> copy(small_config(), 99);
  copy.copy_parameters_from(f);
  CHECK(animate_window(copy, pair.driving, pair.target).frames.size() == 3);
  ModelConfig other = small_config();
  other.heads = 2;
  AniFormer<double> mismatched(other, 1);
  CHECK_THROWS_AS(mismatched.copy_parameters_from(f), ContractError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "aniformer_test_model_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";

  const SamplePair pair = make_pair(25, 26, 27, 28, toy_synth(), 3);
  ModelConfig c = small_config();
  c.softmax_axis = SoftmaxAxis::kQuery;
  AniFormer<float> model(c, 37);
  set_gammas(model, 0.25);
  save_model(model, path);
  CHECK(std::filesystem::exists(config_sidecar(path)));
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));

  const AniFormer<float> loaded = load_model<float>(path);
  CHECK(loaded.config() == c);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(loaded.parameters()[i].name == model.parameters()[i].name);
    CHECK(max_abs_diff(loaded.parameters()[i].value.data(), model.parameters()[i].value.data()) == 0.0);
  }
  CHECK(animate_window(loaded, pair.driving, pair.target).frames ==
        animate_window(model, pair.driving, pair.target).frames);

  SUBCASE("regression head config survives") {
    ModelConfig r = small_config();
    r.regression_head = true;
    r.vertex_count = pair.target.vertex_count();
    r.head_hidden = 12;
    AniFormer<float> head(r, 38);
    save_model(head, path);
    const auto back = load_model<float>(path);
    CHECK(back.config() == r);
    CHECK(forward_regression_head(back, pair.driving, pair.target) ==
          forward_regression_head(head, pair.driving, pair.target));
  }
  SUBCASE("corruption is detected") {
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto write = [&](const std::string& b) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    write(flipped);
    CHECK_THROWS_AS(read_tensors(path), ValidationError);
    write(bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(read_tensors(path), ValidationError);
    std::string magic = bytes;
    magic[0] = 'X';
    write(magic);
    CHECK_THROWS_AS(read_tensors(path), ValidationError);
    std::string version = bytes;
    version[8] = 2;
    write(version);
    CHECK_THROWS_AS(read_tensors(path), ValidationError);
    CHECK_THROWS_AS(read_tensors(dir / "missing.ckpt"), IoError);
  }
  SUBCASE("mismatched model is rejected") {
    AniFormer<float> wider(ModelConfig{}, 1);
    CHECK_THROWS_AS(assign_parameters(wider, read_tensors(path)), ValidationError);
  }
  SUBCASE("config sidecar parsing") {
    CHECK(model_config_from_json(model_config_to_json(c)) == c);
    CHECK_THROWS_AS(model_config_from_json("{\"heads\": 1, \"bogus\": 2}"), ValidationError);
    CHECK_THROWS_AS(model_config_from_json("{\"heads\": "), ParseError);
    CHECK_THROWS_AS(model_config_from_json("{\"heads\": \"two\"}"), ValidationError);
    CHECK_THROWS_AS(model_config_from_json("{\"heads\": 3}"), ValidationError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("finite-difference mismatches on a generic instance are kink crossings") {
  // Away from the fixed toy instance, ReLU and |.| kinks can fall inside the
  // h = 1e-5 stencil. Every element whose central difference disagrees must
  // then agree with one of the one-sided differences.
  const SamplePair pair = make_pair(3, 4, 5, 6, toy_synth(), 3);
  AniFormer<double> model(small_config(), 1);
  set_gammas(model, 0.3);
  const Tensor<double> d = sequence_tensor<double>(pair.driving);
  const Tensor<double> g = sequence_tensor<double>(pair.ground_truth);
  const Tensor<double> n = mesh_tensor<double>(pair.target);
  const Neighborhood nbr = build_neighborhood(pair.target);
  auto objective = [&] { return full_objective(model.forward(d, n), g, d, n, nbr).total; };

  objective().backward();
  const double h = 1e-5;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  std::size_t mismatches = 0, kinks = 0;
  NoGradGuard no_grad;
  const double f0 = objective().item();
  for (const auto& [name, value] : model.parameters()) {
    auto values = Tensor<double>(value).mutable_data();
    const auto grad = value.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = objective().item();
      values[i] = saved - h;
      const double down = objective().item();
      values[i] = saved;
      if (rel(grad[i], (up - down) / (2 * h)) < 1e-4) continue;
      ++mismatches;
      if (std::min(rel(grad[i], (up - f0) / h), rel(grad[i], (f0 - down) / h)) < 1e-3) ++kinks;
    }
  }
  MESSAGE("central-difference mismatches: ", mismatches);
  CHECK(mismatches > 0);
  CHECK(kinks == mismatches);
}
