#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vlf/encoders.hpp"
#include "vlf/tensor.hpp"

namespace vlf {

enum class FusionMode { ElementwiseProduct, Addition, Concatenation };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);

struct VlfmConfig {
  int d = 32;
  int layers = 2;
  int heads = 4;
  FusionMode mode = FusionMode::ElementwiseProduct;
  bool img_to_text = true;  // CA with E_C as queries
  bool text_to_img = true;  // CA with E_L as queries
  // Spatial grid of the detector's final map; needed to unflatten the
  // text-to-image attention into a heat grid.
  int grid_h = 4;
  int grid_w = 4;

  void validate() const;
};

// One fusion layer: independent Q/K/V projection triples per direction plus a
// per-branch MLP (d -> 4d -> d, tanh). No residuals or normalization.
struct FusionLayerParams {
  Tensor i2t_wq, i2t_wk, i2t_wv;
  Tensor t2i_wq, t2i_wk, t2i_wv;
  Tensor img_mlp_w1, img_mlp_b1, img_mlp_w2, img_mlp_b2;
  Tensor text_mlp_w1, text_mlp_b1, text_mlp_w2, text_mlp_b2;
};

struct VlfmParams {
  std::vector<FusionLayerParams> layers;
  Tensor cls_w, cls_b;  // classifier over the joint representation

  static VlfmParams init(const VlfmConfig& config, std::uint64_t seed);
  std::vector<NamedTensor> tensors();
};

// Attention probabilities captured during a forward pass, one matrix per head.
struct LayerAttention {
  std::vector<Tensor> img_to_text;  // each [n_c x n_l]
  std::vector<Tensor> text_to_img;  // each [n_l x n_c]
};

struct AttentionTrace {
  std::vector<LayerAttention> layers;
};

// Multi-head cross attention: per head softmax((Q Wq)(K Wk)^T / sqrt(d_h))
// (V Wv), heads concatenated. d_h = d / heads.
Tensor cross_attention(const Tensor& q_src, const Tensor& kv_src,
                       const Tensor& wq, const Tensor& wk, const Tensor& wv,
                       int heads, std::vector<Tensor>* head_probs = nullptr);

// Parallel branch update: both attentions read the layer inputs; disabled
// directions pass the branch's own input to its MLP.
std::pair<Tensor, Tensor> fusion_layer(const Tensor& e_c, const Tensor& e_l,
                                       const FusionLayerParams& params,
                                       const VlfmConfig& config,
                                       LayerAttention* attention = nullptr);

// Mean over the token axis: [n x d] -> [1 x d].
Tensor gap1d(const Tensor& tokens);

Tensor joint_representation(const Tensor& g_c, const Tensor& g_l,
                            FusionMode mode);

struct VlfmOut {
  Tensor logits;  // [1 x 2], classes (real, fake)
  double score = 0.0;
  AttentionTrace trace;
};

VlfmOut vlfm_forward(const Tensor& e_c, const Tensor& e_l,
                     const VlfmParams& params, const VlfmConfig& config,
                     bool want_trace = false);

// Fakeness probability from (real, fake) logits.
double classify_score(const Tensor& logits);

// Text-to-image attention of the final fusion layer, averaged over heads and
// text tokens, unflattened to the spatial grid and min-max normalized to
// [0, 1]. A constant map normalizes to all zeros.
struct AttentionMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;      // normalized
  double pre_min = 0.0;            // normalization bounds
  double pre_max = 0.0;
  double pre_total = 0.0;          // grid mass before normalization

  int argmax_cell() const;  // flat index, lowest index wins ties
};

AttentionMap attention_map(const Tensor& e_c, const Tensor& e_l,
                           const VlfmParams& params, const VlfmConfig& config);

// 16-bit binary PGM plus a JSON sidecar describing the aggregation.
void write_attention_map(const std::string& path_pgm, const AttentionMap& map);

}  // namespace vlf
