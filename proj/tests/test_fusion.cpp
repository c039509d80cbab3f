#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "vlf/errors.hpp"
#include "vlf/fusion.hpp"
#include "vlf/rng.hpp"

using namespace vlf;

namespace {

Tensor random_matrix(Rng& rng, int m, int n) {
  std::vector<double> data(static_cast<std::size_t>(m) * n);
  for (auto& v : data) v = rng.normal();
  return Tensor::matrix(m, n, std::move(data));
}

Tensor permute_rows(const Tensor& t, const std::vector<int>& perm) {
  std::vector<double> data(t.size());
  const int n = t.cols();
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < n; ++j)
      data[static_cast<std::size_t>(i) * n + j] = t.at(perm[i], j);
  return Tensor::matrix(t.rows(), n, std::move(data));
}

}  // namespace

TEST_CASE("single key/value token: output is its value projection") {
  Rng rng(3);
  const int d = 6;
  const Tensor wq = random_matrix(rng, d, d);
  const Tensor wk = random_matrix(rng, d, d);
  const Tensor wv = random_matrix(rng, d, d);
  const Tensor kv = random_matrix(rng, 1, d);
  const Tensor expected = matmul(kv, wv);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor q = random_matrix(rng, 4, d);
    const Tensor out = cross_attention(q, kv, wq, wk, wv, 2);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < d; ++j)
        CHECK(out.at(i, j) == doctest::Approx(expected.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("closed form: d=1 identity weights give tanh(x)") {
  const Tensor eye = Tensor::matrix(1, 1, {1.0});
  const Tensor kv = Tensor::matrix(2, 1, {1.0, -1.0});
  for (const double x : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    const Tensor q = Tensor::matrix(1, 1, {x});
    const Tensor out = cross_attention(q, kv, eye, eye, eye, 1);
    CHECK(std::abs(out.at(0, 0) - std::tanh(x)) < 1e-9);
  }
}

TEST_CASE("key/value permutation invariance") {
  Rng rng(8);
  const int d = 8;
  const Tensor wq = random_matrix(rng, d, d);
  const Tensor wk = random_matrix(rng, d, d);
  const Tensor wv = random_matrix(rng, d, d);
  const Tensor q = random_matrix(rng, 3, d);
  const Tensor kv = random_matrix(rng, 5, d);
  const Tensor base = cross_attention(q, kv, wq, wk, wv, 4);
  std::vector<int> perm = {4, 2, 0, 3, 1};
  const Tensor shuffled = cross_attention(q, permute_rows(kv, perm), wq, wk,
                                          wv, 4);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(std::abs(base.at(i) - shuffled.at(i)) < 1e-12);
  }
}

TEST_CASE("cross_attention rejects bad head split") {
  Rng rng(1);
  const Tensor w = random_matrix(rng, 6, 6);
  const Tensor x = random_matrix(rng, 2, 6);
  CHECK_THROWS_AS(cross_attention(x, x, w, w, w, 4), ConfigError);
}

TEST_CASE("fusion layer preserves shapes and honors direction mask") {
  VlfmConfig config;
  config.d = 8;
  config.heads = 2;
  config.layers = 1;
  const VlfmParams params = VlfmParams::init(config, 17);
  Rng rng(5);
  const Tensor e_c = random_matrix(rng, 7, 8);
  const Tensor e_l = random_matrix(rng, 3, 8);
  const auto [c_out, l_out] = fusion_layer(e_c, e_l, params.layers[0], config);
  CHECK(c_out.shape() == e_c.shape());
  CHECK(l_out.shape() == e_l.shape());

  // Both directions disabled: the image branch ignores text content entirely.
  VlfmConfig off = config;
  off.img_to_text = false;
  off.text_to_img = false;
  const auto [c_off, l_off] = fusion_layer(e_c, e_l, params.layers[0], off);
  const Tensor e_l_other = random_matrix(rng, 3, 8);
  const auto [c_off2, l_off2] =
      fusion_layer(e_c, e_l_other, params.layers[0], off);
  for (std::size_t i = 0; i < c_off.size(); ++i) {
    CHECK(c_off.at(i) == c_off2.at(i));
  }

  CHECK_THROWS_AS(fusion_layer(e_c, random_matrix(rng, 3, 4),
                               params.layers[0], config),
                  ShapeError);
}

TEST_CASE("joint permutation of tokens permutes outputs consistently") {
  VlfmConfig config;
  config.d = 4;
  config.heads = 2;
  config.layers = 1;
  const VlfmParams params = VlfmParams::init(config, 23);
  Rng rng(6);
  const Tensor e_c = random_matrix(rng, 3, 4);
  const Tensor e_l = random_matrix(rng, 3, 4);
  const std::vector<int> pc = {2, 0, 1};
  const std::vector<int> pl = {1, 2, 0};
  const auto [c1, l1] = fusion_layer(e_c, e_l, params.layers[0], config);
  const auto [c2, l2] = fusion_layer(permute_rows(e_c, pc),
                                     permute_rows(e_l, pl),
                                     params.layers[0], config);
  const Tensor c1p = permute_rows(c1, pc);
  const Tensor l1p = permute_rows(l1, pl);
  for (std::size_t i = 0; i < c1p.size(); ++i) {
    CHECK(c2.at(i) == doctest::Approx(c1p.at(i)).epsilon(1e-12));
    CHECK(l2.at(i) == doctest::Approx(l1p.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("gap1d") {
  CHECK(gap1d(Tensor::matrix(1, 3, {4, 5, 6})).at(0, 0) == 4);
  const Tensor g = gap1d(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(g.at(0, 0) == doctest::Approx(2.0));
  CHECK(g.at(0, 1) == doctest::Approx(3.0));
  const Tensor p = gap1d(Tensor::matrix(2, 2, {3, 4, 1, 2}));
  CHECK(p.at(0, 0) == doctest::Approx(2.0));
  CHECK(p.at(0, 1) == doctest::Approx(3.0));
}

TEST_CASE("joint_representation modes") {
  const Tensor a = Tensor::matrix(1, 2, {1, 2});
  const Tensor b = Tensor::matrix(1, 2, {3, 4});
  const Tensor prod = joint_representation(a, b, FusionMode::ElementwiseProduct);
  CHECK(prod.at(0, 0) == 3);
  CHECK(prod.at(0, 1) == 8);
  const Tensor sum = joint_representation(a, b, FusionMode::Addition);
  CHECK(sum.at(0, 0) == 4);
  CHECK(sum.at(0, 1) == 6);
  const Tensor cat = joint_representation(a, b, FusionMode::Concatenation);
  CHECK(cat.cols() == 4);
  CHECK(cat.at(0, 2) == 3);
}

TEST_CASE("classifier score") {
  CHECK(classify_score(Tensor::matrix(1, 2, {0, 0})) == doctest::Approx(0.5));
  CHECK(classify_score(Tensor::matrix(1, 2, {0, 20})) > 0.999);
  const double p_fake = classify_score(Tensor::matrix(1, 2, {0.7, -0.3}));
  const double p_real = classify_score(Tensor::matrix(1, 2, {-0.3, 0.7}));
  CHECK(std::abs(p_fake + p_real - 1.0) < 1e-12);
}

TEST_CASE("attention rows sum to one at every layer and head") {
  VlfmConfig config;
  config.d = 8;
  config.heads = 4;
  config.layers = 2;
  const VlfmParams params = VlfmParams::init(config, 31);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor e_c = random_matrix(rng, 1 + (trial % 5), 8);
    const Tensor e_l = random_matrix(rng, 1 + (trial % 3), 8);
    const VlfmOut out = vlfm_forward(e_c, e_l, params, config, true);
    REQUIRE(out.trace.layers.size() == 2);
    for (const LayerAttention& layer : out.trace.layers) {
      REQUIRE(layer.img_to_text.size() == 4);
      REQUIRE(layer.text_to_img.size() == 4);
      for (const auto& probs : layer.img_to_text) {
        for (int i = 0; i < probs.rows(); ++i) {
          double sum = 0;
          for (int j = 0; j < probs.cols(); ++j) sum += probs.at(i, j);
          CHECK(std::abs(sum - 1.0) < 1e-9);
        }
      }
      for (const auto& probs : layer.text_to_img) {
        for (int i = 0; i < probs.rows(); ++i) {
          double sum = 0;
          for (int j = 0; j < probs.cols(); ++j) sum += probs.at(i, j);
          CHECK(std::abs(sum - 1.0) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("score invariant under joint token permutation") {
  VlfmConfig config;
  config.d = 8;
  config.heads = 2;
  config.layers = 2;
  const VlfmParams params = VlfmParams::init(config, 41);
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor e_c = random_matrix(rng, 6, 8);
    const Tensor e_l = random_matrix(rng, 4, 8);
    std::vector<int> pc(6), pl(4);
    std::iota(pc.begin(), pc.end(), 0);
    std::iota(pl.begin(), pl.end(), 0);
    for (int i = 5; i > 0; --i)
      std::swap(pc[i], pc[rng.uniform_int(i + 1)]);
    for (int i = 3; i > 0; --i)
      std::swap(pl[i], pl[rng.uniform_int(i + 1)]);
    const double s1 = vlfm_forward(e_c, e_l, params, config).score;
    const double s2 = vlfm_forward(permute_rows(e_c, pc),
                                   permute_rows(e_l, pl), params, config)
                          .score;
    CHECK(std::abs(s1 - s2) < 1e-10);
  }
}

TEST_CASE("disabling both directions decouples the branches") {
  VlfmConfig config;
  config.d = 8;
  config.heads = 2;
  config.layers = 2;
  config.img_to_text = false;
  config.text_to_img = false;
  const VlfmParams params = VlfmParams::init(config, 43);
  Rng rng(11);
  const Tensor e_c = random_matrix(rng, 4, 8);
  const Tensor e_l1 = random_matrix(rng, 4, 8);
  const Tensor e_l2 = random_matrix(rng, 4, 8);
  // GAP of the image branch never reacts to text content.
  Tensor c1 = e_c, l1 = e_l1, c2 = e_c, l2 = e_l2;
  for (int i = 0; i < 2; ++i) {
    std::tie(c1, l1) = fusion_layer(c1, l1, params.layers[i], config);
    std::tie(c2, l2) = fusion_layer(c2, l2, params.layers[i], config);
  }
  const Tensor g1 = gap1d(c1);
  const Tensor g2 = gap1d(c2);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1.at(i) == g2.at(i));
}

TEST_CASE("default config matches the published layout and L sweeps run") {
  const VlfmConfig config;
  CHECK(config.layers == 2);
  Rng rng(12);
  for (int layers = 1; layers <= 4; ++layers) {
    VlfmConfig c;
    c.d = 8;
    c.heads = 2;
    c.layers = layers;
    const VlfmParams p = VlfmParams::init(c, 50 + layers);
    const Tensor e_c = random_matrix(rng, 4, 8);
    const Tensor e_l = random_matrix(rng, 2, 8);
    const VlfmOut out = vlfm_forward(e_c, e_l, p, c);
    CHECK(out.score >= 0.0);
    CHECK(out.score <= 1.0);
  }
  // The published head count splits the default width evenly.
  VlfmConfig full;
  full.heads = 16;
  CHECK_NOTHROW(full.validate());
}

TEST_CASE("attention map aggregation, normalization and export") {
  VlfmConfig config;
  config.d = 8;
  config.heads = 2;
  config.layers = 2;
  config.grid_h = 2;
  config.grid_w = 2;
  const VlfmParams params = VlfmParams::init(config, 61);
  Rng rng(13);
  const Tensor e_c = random_matrix(rng, 4, 8);
  const Tensor e_l = random_matrix(rng, 3, 8);
  const AttentionMap map = attention_map(e_c, e_l, params, config);
  CHECK(map.values.size() == 4);
  // Softmax rows over the grid: total pre-normalization mass is exactly 1.
  CHECK(map.pre_total == doctest::Approx(1.0).epsilon(1e-9));
  const double mx = *std::max_element(map.values.begin(), map.values.end());
  const double mn = *std::min_element(map.values.begin(), map.values.end());
  CHECK(mx == doctest::Approx(1.0));
  CHECK(mn == doctest::Approx(0.0));

  // Degenerate single-cell grid: constant map normalizes to zero.
  VlfmConfig tiny = config;
  tiny.grid_h = 1;
  tiny.grid_w = 1;
  const VlfmParams tiny_params = VlfmParams::init(tiny, 62);
  const AttentionMap one =
      attention_map(random_matrix(rng, 1, 8), e_l, tiny_params, tiny);
  CHECK(one.pre_total == doctest::Approx(1.0));
  CHECK(one.values[0] == 0.0);

  CHECK_THROWS_AS(attention_map(random_matrix(rng, 3, 8), e_l, params, config),
                  ShapeError);

  const auto path =
      (std::filesystem::temp_directory_path() / "vlf_attn_test.pgm").string();
  write_attention_map(path, map);
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  CHECK(header == "P5");
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

TEST_CASE("gradient check through the full fusion stack with CE loss") {
  VlfmConfig config;
  config.d = 8;
  config.heads = 2;
  config.layers = 2;
  const VlfmParams params = VlfmParams::init(config, 71);
  Rng rng(14);
  const Tensor e_c = random_matrix(rng, 4, 8);
  const Tensor e_l = random_matrix(rng, 4, 8);

  // Swap one tensor handle for the probe and run the full forward + CE.
  auto check_param = [&](auto&& select) {
    const Tensor snapshot = select(const_cast<VlfmParams&>(params)).detached();
    const double err = grad_check(
        [&](const Tensor& x) {
          VlfmParams trial = params;  // handles are shared, so rebind one
          select(trial) = x;
          const VlfmOut out = vlfm_forward(e_c, e_l, trial, config);
          return cross_entropy(out.logits, {1});
        },
        snapshot, 1e-5);
    CHECK(err < 1e-4);
  };

  check_param([](VlfmParams& p) -> Tensor& { return p.layers[0].i2t_wq; });
  check_param([](VlfmParams& p) -> Tensor& { return p.layers[0].t2i_wv; });
  check_param([](VlfmParams& p) -> Tensor& { return p.layers[1].img_mlp_w1; });
  check_param([](VlfmParams& p) -> Tensor& { return p.layers[1].text_mlp_w2; });
  check_param([](VlfmParams& p) -> Tensor& { return p.cls_w; });
}
