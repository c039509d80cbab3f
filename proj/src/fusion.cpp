#include "vlf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "vlf/errors.hpp"
#include "vlf/rng.hpp"

namespace vlf {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::ElementwiseProduct: return "elementwise_product";
    case FusionMode::Addition: return "addition";
    case FusionMode::Concatenation: return "concatenation";
  }
  return "elementwise_product";
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "elementwise_product") return FusionMode::ElementwiseProduct;
  if (name == "addition") return FusionMode::Addition;
  if (name == "concatenation") return FusionMode::Concatenation;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

void VlfmConfig::validate() const {
  if (layers < 1) throw ConfigError("fusion layer count must be >= 1");
  if (heads < 1) throw ConfigError("head count must be >= 1");
  if (d % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
}

VlfmParams VlfmParams::init(const VlfmConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, "vlfm"));
  auto square = [&](double stddev) {
    std::vector<double> data(static_cast<std::size_t>(config.d) * config.d);
    for (auto& v : data) v = rng.normal(0.0, stddev);
    return Tensor::matrix(config.d, config.d, std::move(data));
  };
  auto linear = [&](int in_dim, int out_dim) {
    std::vector<double> data(static_cast<std::size_t>(in_dim) * out_dim);
    for (auto& v : data) v = rng.normal(0.0, 1.0 / std::sqrt(in_dim));
    return Tensor::matrix(in_dim, out_dim, std::move(data));
  };
  const double proj_std = 1.0 / std::sqrt(config.d);

  VlfmParams p;
  for (int l = 0; l < config.layers; ++l) {
    FusionLayerParams layer;
    layer.i2t_wq = square(proj_std);
    layer.i2t_wk = square(proj_std);
    layer.i2t_wv = square(proj_std);
    layer.t2i_wq = square(proj_std);
    layer.t2i_wk = square(proj_std);
    layer.t2i_wv = square(proj_std);
    layer.img_mlp_w1 = linear(config.d, 4 * config.d);
    layer.img_mlp_b1 = Tensor::zeros({1, 4 * config.d});
    layer.img_mlp_w2 = linear(4 * config.d, config.d);
    layer.img_mlp_b2 = Tensor::zeros({1, config.d});
    layer.text_mlp_w1 = linear(config.d, 4 * config.d);
    layer.text_mlp_b1 = Tensor::zeros({1, 4 * config.d});
    layer.text_mlp_w2 = linear(4 * config.d, config.d);
    layer.text_mlp_b2 = Tensor::zeros({1, config.d});
    p.layers.push_back(std::move(layer));
  }
  const int cls_in =
      config.mode == FusionMode::Concatenation ? 2 * config.d : config.d;
  p.cls_w = linear(cls_in, 2);
  p.cls_b = Tensor::zeros({1, 2});
  return p;
}

std::vector<NamedTensor> VlfmParams::tensors() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    FusionLayerParams& fl = layers[l];
    out.push_back({prefix + "i2t_wq", fl.i2t_wq});
    out.push_back({prefix + "i2t_wk", fl.i2t_wk});
    out.push_back({prefix + "i2t_wv", fl.i2t_wv});
    out.push_back({prefix + "t2i_wq", fl.t2i_wq});
    out.push_back({prefix + "t2i_wk", fl.t2i_wk});
    out.push_back({prefix + "t2i_wv", fl.t2i_wv});
    out.push_back({prefix + "img_mlp_w1", fl.img_mlp_w1});
    out.push_back({prefix + "img_mlp_b1", fl.img_mlp_b1});
    out.push_back({prefix + "img_mlp_w2", fl.img_mlp_w2});
    out.push_back({prefix + "img_mlp_b2", fl.img_mlp_b2});
    out.push_back({prefix + "text_mlp_w1", fl.text_mlp_w1});
    out.push_back({prefix + "text_mlp_b1", fl.text_mlp_b1});
    out.push_back({prefix + "text_mlp_w2", fl.text_mlp_w2});
    out.push_back({prefix + "text_mlp_b2", fl.text_mlp_b2});
  }
  out.push_back({"cls_w", cls_w});
  out.push_back({"cls_b", cls_b});
  return out;
}

Tensor cross_attention(const Tensor& q_src, const Tensor& kv_src,
                       const Tensor& wq, const Tensor& wk, const Tensor& wv,
                       int heads, std::vector<Tensor>* head_probs) {
  const int d = wq.rows();
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (q_src.cols() != d || kv_src.cols() != d) {
    throw ShapeError("cross_attention dim mismatch: queries " +
                     shape_to_string(q_src.shape()) + ", keys/values " +
                     shape_to_string(kv_src.shape()) + ", weights " +
                     shape_to_string(wq.shape()));
  }
  const Tensor q = matmul(q_src, wq);
  const Tensor k = matmul(kv_src, wk);
  const Tensor v = matmul(kv_src, wv);
  const int dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    const Tensor probs = softmax_rows(scores);
    if (head_probs) head_probs->push_back(probs);
    outputs.push_back(matmul(probs, vh));
  }
  return concat_cols(outputs);
}

namespace {

Tensor branch_mlp(const Tensor& x, const Tensor& w1, const Tensor& b1,
                  const Tensor& w2, const Tensor& b2) {
  return add_row_bias(matmul(vtanh(add_row_bias(matmul(x, w1), b1)), w2), b2);
}

}  // namespace

std::pair<Tensor, Tensor> fusion_layer(const Tensor& e_c, const Tensor& e_l,
                                       const FusionLayerParams& params,
                                       const VlfmConfig& config,
                                       LayerAttention* attention) {
  if (e_c.cols() != e_l.cols()) {
    throw ShapeError("fusion_layer branches disagree on d: " +
                     shape_to_string(e_c.shape()) + " vs " +
                     shape_to_string(e_l.shape()));
  }
  // Both attentions read the layer inputs (parallel update).
  Tensor c_att = e_c;
  Tensor l_att = e_l;
  if (config.img_to_text) {
    c_att = cross_attention(e_c, e_l, params.i2t_wq, params.i2t_wk,
                            params.i2t_wv, config.heads,
                            attention ? &attention->img_to_text : nullptr);
  }
  if (config.text_to_img) {
    l_att = cross_attention(e_l, e_c, params.t2i_wq, params.t2i_wk,
                            params.t2i_wv, config.heads,
                            attention ? &attention->text_to_img : nullptr);
  }
  Tensor c_out = branch_mlp(c_att, params.img_mlp_w1, params.img_mlp_b1,
                            params.img_mlp_w2, params.img_mlp_b2);
  Tensor l_out = branch_mlp(l_att, params.text_mlp_w1, params.text_mlp_b1,
                            params.text_mlp_w2, params.text_mlp_b2);
  return {std::move(c_out), std::move(l_out)};
}

Tensor gap1d(const Tensor& tokens) { return mean_rows(tokens); }

Tensor joint_representation(const Tensor& g_c, const Tensor& g_l,
                            FusionMode mode) {
  switch (mode) {
    case FusionMode::ElementwiseProduct:
      return hadamard(g_c, g_l);
    case FusionMode::Addition:
      return add(g_c, g_l);
    case FusionMode::Concatenation:
      return concat_cols({g_c, g_l});
  }
  throw ConfigError("unknown fusion mode");
}

double classify_score(const Tensor& logits) {
  const double a = logits.at(0, 0);  // real
  const double b = logits.at(0, 1);  // fake
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return eb / (ea + eb);
}

VlfmOut vlfm_forward(const Tensor& e_c, const Tensor& e_l,
                     const VlfmParams& params, const VlfmConfig& config,
                     bool want_trace) {
  config.validate();
  if (static_cast<int>(params.layers.size()) != config.layers) {
    throw ConfigError("parameter set holds " +
                      std::to_string(params.layers.size()) +
                      " layers, config expects " +
                      std::to_string(config.layers));
  }
  VlfmOut out;
  Tensor c = e_c;
  Tensor l = e_l;
  for (int i = 0; i < config.layers; ++i) {
    LayerAttention* att = nullptr;
    if (want_trace) {
      out.trace.layers.emplace_back();
      att = &out.trace.layers.back();
    }
    auto [c2, l2] = fusion_layer(c, l, params.layers[i], config, att);
    c = std::move(c2);
    l = std::move(l2);
  }
  const Tensor z = joint_representation(gap1d(c), gap1d(l), config.mode);
  out.logits = add_row_bias(matmul(z, params.cls_w), params.cls_b);
  out.score = classify_score(out.logits);
  return out;
}

int AttentionMap::argmax_cell() const {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

AttentionMap attention_map(const Tensor& e_c, const Tensor& e_l,
                           const VlfmParams& params, const VlfmConfig& config) {
  if (!config.text_to_img) {
    throw ConfigError(
        "attention_map requires the text-to-image direction enabled");
  }
  const int n_c = e_c.rows();
  if (n_c != config.grid_h * config.grid_w) {
    throw ShapeError("n_c=" + std::to_string(n_c) +
                     " does not match configured grid " +
                     std::to_string(config.grid_h) + "x" +
                     std::to_string(config.grid_w));
  }
  VlfmOut fwd = vlfm_forward(e_c, e_l, params, config, /*want_trace=*/true);
  const LayerAttention& last = fwd.trace.layers.back();

  AttentionMap map;
  map.height = config.grid_h;
  map.width = config.grid_w;
  map.values.assign(static_cast<std::size_t>(n_c), 0.0);
  // Mean over heads and text tokens of [n_l x n_c] probability rows.
  const int heads = static_cast<int>(last.text_to_img.size());
  const int n_l = e_l.rows();
  for (const Tensor& probs : last.text_to_img) {
    for (int i = 0; i < n_l; ++i)
      for (int j = 0; j < n_c; ++j) map.values[j] += probs.at(i, j);
  }
  for (double& v : map.values) v /= static_cast<double>(heads) * n_l;
  map.pre_total = 0.0;
  for (const double v : map.values) map.pre_total += v;
  map.pre_min = *std::min_element(map.values.begin(), map.values.end());
  map.pre_max = *std::max_element(map.values.begin(), map.values.end());
  const double range = map.pre_max - map.pre_min;
  if (range <= 0.0) {
    std::fill(map.values.begin(), map.values.end(), 0.0);
  } else {
    for (double& v : map.values) v = (v - map.pre_min) / range;
  }
  return map;
}

void write_attention_map(const std::string& path_pgm, const AttentionMap& map) {
  std::ofstream out(path_pgm, std::ios::binary);
  if (!out) throw DataError("cannot open " + path_pgm + " for writing");
  out << "P5\n" << map.width << " " << map.height << "\n65535\n";
  for (const double v : map.values) {
    const auto s = static_cast<std::uint16_t>(
        std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    // Big-endian sample order per the format.
    out.put(static_cast<char>(s >> 8));
    out.put(static_cast<char>(s & 0xff));
  }
  if (!out) throw DataError("write failed for " + path_pgm);

  nlohmann::json side;
  side["layer"] = "final";
  side["head_aggregation"] = "mean";
  side["token_aggregation"] = "mean";
  side["normalization"] = {{"min", map.pre_min}, {"max", map.pre_max}};
  side["grid"] = {map.height, map.width};
  std::ofstream sidecar(path_pgm + ".json");
  sidecar << side.dump(2) << "\n";
}

}  // namespace vlf
