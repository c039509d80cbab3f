#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vlf/tensor.hpp"

namespace vlf {

// Named parameter handle; groups are serialized and optimized in list order.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// ---- external detector stand-in ---------------------------------------------
//
// Three stride-2 stages of non-overlapping 2x2 patch filters with a tanh
// nonlinearity. Stage 2 output is the penultimate feature map (tapped by the
// text pathway); stage 3 output is the final map whose channel count equals
// the fusion embedding dimension d. A small head on the pooled final map
// yields the stage-1 classification logits.

struct DetectorConfig {
  int image_size = 32;
  int c1 = 12;
  int c2 = 16;  // penultimate channels
  int d = 32;   // final channels == fusion embedding dim

  int penultimate_side() const { return image_size / 4; }
  int final_side() const { return image_size / 8; }
};

struct DetectorParams {
  Tensor w1, b1;  // [12 x c1], [1 x c1]
  Tensor w2, b2;  // [4*c1 x c2], [1 x c2]
  Tensor w3, b3;  // [4*c2 x d], [1 x d]
  Tensor head_w, head_b;  // [d x 2], [1 x 2]

  static DetectorParams init(const DetectorConfig& config, std::uint64_t seed);
  std::vector<NamedTensor> tensors();
};

struct DetectorOut {
  Tensor penultimate;  // [s2 x s2 x c2]
  Tensor final_map;    // [s3 x s3 x d]
  Tensor logits;       // [1 x 2], classes (real, fake)
};

DetectorOut detect_features(const Tensor& image, const DetectorParams& params,
                            const DetectorConfig& config);

// [h x w x c] -> [(h*w) x c], row-major token order.
Tensor flatten_spatial(const Tensor& map);

// ---- image encoder stand-in --------------------------------------------------

struct ImageEncoderConfig {
  int image_size = 32;
  int patch = 8;
  int d_v = 24;

  int tokens() const {
    return (image_size / patch) * (image_size / patch);
  }
};

struct ImageEncoderParams {
  Tensor w, b;  // [3*patch*patch x d_v], [1 x d_v]

  static ImageEncoderParams init(const ImageEncoderConfig& config,
                                 std::uint64_t seed);
  std::vector<NamedTensor> tensors();
};

// Non-overlapping patch embedding producing E_V.
Tensor encode_image_tokens(const Tensor& image, const ImageEncoderParams& params,
                           const ImageEncoderConfig& config);

// ---- vocabulary ---------------------------------------------------------------

// Whitespace token vocabulary. Id 0 is the padding token.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  static Vocabulary build(const std::vector<std::string>& texts);
  static std::vector<std::string> split_words(const std::string& text);

  int size() const { return static_cast<int>(words_.size()); }
  int pad_id() const { return 0; }
  int unknown_id() const { return 1; }
  const std::string& word(int id) const;
  int id(const std::string& word) const;  // unknown_id when absent
  const std::vector<std::string>& words() const { return words_; }

  // Token ids padded/truncated to `length` (length < 0 keeps natural length).
  std::vector<int> encode(const std::string& text, int length = -1) const;
  std::string decode(const std::vector<int>& ids) const;  // pads skipped

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// ---- text pathway stand-in -----------------------------------------------------
//
// Two projectors map E_V and the flattened penultimate detector map into the
// text space; the sequence [proj(E_V); proj(E_C_pen); fixed prompt; embedded
// question] runs through a two-layer token mixer (per-token linear + mean-pool
// context injection, tanh). E_L is the last n_l hidden states; answer token
// logits come from a linear head over E_L.

struct TextPathwayConfig {
  int d_t = 32;       // text hidden dim; must equal fusion d in the full net
  int n_prompt = 4;   // fixed prompt embedding count
  int n_l = 8;        // positions forming E_L (and answer slots)
  int vocab = 64;
  int d_v = 24;       // E_V column count
  int c_pen = 16;     // penultimate channel count
  bool use_detector_tokens = true;  // off = drop proj(E_C_pen) from the sequence
};

struct TextPathwayParams {
  Tensor embedding;            // [vocab x d_t]
  Tensor proj_v_w, proj_v_b;   // [d_v x d_t], [1 x d_t]
  Tensor proj_c_w, proj_c_b;   // [c_pen x d_t], [1 x d_t]
  Tensor mix1_tok, mix1_ctx, mix1_b;
  Tensor mix2_tok, mix2_ctx, mix2_b;
  Tensor out_w, out_b;         // [d_t x vocab], [1 x vocab]
  Tensor prompt;               // [n_prompt x d_t], constant, never trained

  static TextPathwayParams init(const TextPathwayConfig& config,
                                std::uint64_t seed);
  // Trainable tensors only; the prompt block is excluded by contract.
  std::vector<NamedTensor> tensors();
};

struct TextPathwayOut {
  Tensor e_l;           // [n_l x d_t]
  Tensor token_logits;  // [n_l x vocab]
  int sequence_length = 0;
};

TextPathwayOut text_pathway_forward(const Tensor& e_v, const Tensor& e_c_pen,
                                    const TextPathwayParams& params,
                                    const TextPathwayConfig& config,
                                    const std::vector<int>& question_tokens);

// Greedy per-position argmax (ties toward the lowest id), detokenized.
std::string decode_explanation(const Tensor& token_logits,
                               const Vocabulary& vocab);

}  // namespace vlf
