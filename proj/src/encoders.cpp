#include "vlf/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vlf/errors.hpp"
#include "vlf/rng.hpp"

namespace vlf {

namespace {

Tensor gaussian_matrix(Rng& rng, int rows, int cols, double stddev) {
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor::matrix(rows, cols, std::move(data));
}

// Fan-in scaled init for linear layers.
Tensor linear_init(Rng& rng, int in_dim, int out_dim) {
  return gaussian_matrix(rng, in_dim, out_dim, 1.0 / std::sqrt(in_dim));
}

void check_image(const Tensor& image, int expected_size, const char* who) {
  if (image.rank() != 3 || image.shape()[2] != 3) {
    throw ShapeError(std::string(who) + " expects [h x w x 3], got " +
                     shape_to_string(image.shape()));
  }
  if (image.shape()[0] != expected_size || image.shape()[1] != expected_size) {
    throw ShapeError(std::string(who) + " configured for " +
                     std::to_string(expected_size) + "x" +
                     std::to_string(expected_size) + " input, got " +
                     shape_to_string(image.shape()));
  }
}

}  // namespace

// ---- detector ---------------------------------------------------------------

DetectorParams DetectorParams::init(const DetectorConfig& config,
                                    std::uint64_t seed) {
  Rng rng(mix_seed(seed, "detector"));
  DetectorParams p;
  p.w1 = linear_init(rng, 4 * 3, config.c1);
  p.b1 = Tensor::zeros({1, config.c1});
  p.w2 = linear_init(rng, 4 * config.c1, config.c2);
  p.b2 = Tensor::zeros({1, config.c2});
  p.w3 = linear_init(rng, 4 * config.c2, config.d);
  p.b3 = Tensor::zeros({1, config.d});
  // Head sees mean- and max-pooled final-map tokens side by side, so a
  // single strong artifact cell is not washed out by the average.
  p.head_w = linear_init(rng, 2 * config.d, 2);
  p.head_b = Tensor::zeros({1, 2});
  return p;
}

std::vector<NamedTensor> DetectorParams::tensors() {
  return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2},
          {"w3", w3}, {"b3", b3}, {"head_w", head_w}, {"head_b", head_b}};
}

DetectorOut detect_features(const Tensor& image, const DetectorParams& params,
                            const DetectorConfig& config) {
  check_image(image, config.image_size, "detect_features");
  auto stage = [](const Tensor& in, const Tensor& w, const Tensor& b, int side,
                  int channels) {
    const Tensor tokens = extract_patches(in, 2);
    const Tensor lifted = vtanh(add_row_bias(matmul(tokens, w), b));
    return reshape(lifted, {side, side, channels});
  };
  const int s = config.image_size;
  const Tensor s1 = stage(image, params.w1, params.b1, s / 2, config.c1);
  const Tensor s2 = stage(s1, params.w2, params.b2, s / 4, config.c2);
  const Tensor s3 = stage(s2, params.w3, params.b3, s / 8, config.d);
  const Tensor pooled = mean_rows(flatten_spatial(s3));
  const Tensor logits = add_row_bias(matmul(pooled, params.head_w), params.head_b);
  return DetectorOut{s2, s3, logits};
}

Tensor flatten_spatial(const Tensor& map) {
  if (map.rank() != 3) {
    throw ShapeError("flatten_spatial expects rank-3 [h x w x c], got " +
                     shape_to_string(map.shape()));
  }
  const int h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
  return reshape(map, {h * w, c});
}

// ---- image encoder ------------------------------------------------------------

ImageEncoderParams ImageEncoderParams::init(const ImageEncoderConfig& config,
                                            std::uint64_t seed) {
  Rng rng(mix_seed(seed, "image_encoder"));
  ImageEncoderParams p;
  p.w = linear_init(rng, 3 * config.patch * config.patch, config.d_v);
  p.b = Tensor::zeros({1, config.d_v});
  return p;
}

std::vector<NamedTensor> ImageEncoderParams::tensors() {
  return {{"w", w}, {"b", b}};
}

Tensor encode_image_tokens(const Tensor& image, const ImageEncoderParams& params,
                           const ImageEncoderConfig& config) {
  check_image(image, config.image_size, "encode_image_tokens");
  if (config.image_size % config.patch != 0) {
    throw ShapeError("patch size " + std::to_string(config.patch) +
                     " does not divide image size " +
                     std::to_string(config.image_size));
  }
  const Tensor patches = extract_patches(image, config.patch);
  return add_row_bias(matmul(patches, params.w), params.b);
}

// ---- vocabulary -----------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  words_ = {"<pad>", "<unk>"};
  for (auto& w : words) {
    if (w == "<pad>" || w == "<unk>") continue;
    if (!index_.count(w)) {
      index_[w] = static_cast<int>(words_.size());
      words_.push_back(std::move(w));
    }
  }
  index_["<pad>"] = 0;
  index_["<unk>"] = 1;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::vector<std::string> words;
  for (const std::string& t : texts) {
    for (std::string& w : split_words(t)) words.push_back(std::move(w));
  }
  return Vocabulary(std::move(words));
}

std::vector<std::string> Vocabulary::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) {
    throw ContractError("token id " + std::to_string(id) +
                        " outside vocabulary of size " + std::to_string(size()));
  }
  return words_[id];
}

int Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? unknown_id() : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text, int length) const {
  std::vector<int> ids;
  for (const std::string& w : split_words(text)) ids.push_back(id(w));
  if (length >= 0) {
    ids.resize(static_cast<std::size_t>(length), pad_id());
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (const int id : ids) {
    if (id == pad_id()) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

// ---- text pathway ---------------------------------------------------------------

TextPathwayParams TextPathwayParams::init(const TextPathwayConfig& config,
                                          std::uint64_t seed) {
  Rng rng(mix_seed(seed, "text_pathway"));
  TextPathwayParams p;
  p.embedding = gaussian_matrix(rng, config.vocab, config.d_t, 0.5);
  p.proj_v_w = linear_init(rng, config.d_v, config.d_t);
  p.proj_v_b = Tensor::zeros({1, config.d_t});
  p.proj_c_w = linear_init(rng, config.c_pen, config.d_t);
  p.proj_c_b = Tensor::zeros({1, config.d_t});
  p.mix1_tok = linear_init(rng, config.d_t, config.d_t);
  p.mix1_ctx = linear_init(rng, config.d_t, config.d_t);
  p.mix1_b = Tensor::zeros({1, config.d_t});
  p.mix2_tok = linear_init(rng, config.d_t, config.d_t);
  p.mix2_ctx = linear_init(rng, config.d_t, config.d_t);
  p.mix2_b = Tensor::zeros({1, config.d_t});
  p.out_w = linear_init(rng, config.d_t, config.vocab);
  p.out_b = Tensor::zeros({1, config.vocab});
  // Fixed prompt embeddings: drawn once, stored in checkpoints, never trained.
  Rng prompt_rng(mix_seed(seed, "fixed_prompt"));
  p.prompt = gaussian_matrix(prompt_rng, config.n_prompt, config.d_t, 1.0);
  return p;
}

std::vector<NamedTensor> TextPathwayParams::tensors() {
  return {{"embedding", embedding},
          {"proj_v_w", proj_v_w}, {"proj_v_b", proj_v_b},
          {"proj_c_w", proj_c_w}, {"proj_c_b", proj_c_b},
          {"mix1_tok", mix1_tok}, {"mix1_ctx", mix1_ctx}, {"mix1_b", mix1_b},
          {"mix2_tok", mix2_tok}, {"mix2_ctx", mix2_ctx}, {"mix2_b", mix2_b},
          {"out_w", out_w}, {"out_b", out_b}};
}

namespace {

Tensor mixer_layer(const Tensor& h, const Tensor& w_tok, const Tensor& w_ctx,
                   const Tensor& b) {
  const Tensor ctx = matmul(mean_rows(h), w_ctx);  // [1 x d_t]
  const Tensor ctx_rows = concat_rows(std::vector<Tensor>(h.rows(), ctx));
  return vtanh(add(add_row_bias(matmul(h, w_tok), b), ctx_rows));
}

}  // namespace

TextPathwayOut text_pathway_forward(const Tensor& e_v, const Tensor& e_c_pen,
                                    const TextPathwayParams& params,
                                    const TextPathwayConfig& config,
                                    const std::vector<int>& question_tokens) {
  if (params.prompt.rows() < 1) {
    throw ConfigError("text pathway requires non-empty prompt embeddings");
  }
  if (e_v.cols() != config.d_v) {
    throw ShapeError("E_V columns " + std::to_string(e_v.cols()) +
                     " do not match projector input dim " +
                     std::to_string(config.d_v));
  }
  std::vector<Tensor> sequence;
  sequence.push_back(
      add_row_bias(matmul(e_v, params.proj_v_w), params.proj_v_b));
  if (config.use_detector_tokens) {
    if (e_c_pen.cols() != config.c_pen) {
      throw ShapeError("E_C_pen columns " + std::to_string(e_c_pen.cols()) +
                       " do not match projector input dim " +
                       std::to_string(config.c_pen));
    }
    sequence.push_back(
        add_row_bias(matmul(e_c_pen, params.proj_c_w), params.proj_c_b));
  }
  sequence.push_back(params.prompt);
  if (!question_tokens.empty()) {
    sequence.push_back(embed_rows(params.embedding, question_tokens));
  }
  const Tensor input = concat_rows(sequence);

  const Tensor h1 = mixer_layer(input, params.mix1_tok, params.mix1_ctx,
                                params.mix1_b);
  const Tensor h2 = mixer_layer(h1, params.mix2_tok, params.mix2_ctx,
                                params.mix2_b);

  if (config.n_l > h2.rows()) {
    throw ConfigError("n_l=" + std::to_string(config.n_l) +
                      " exceeds sequence length " + std::to_string(h2.rows()));
  }
  TextPathwayOut out;
  out.sequence_length = h2.rows();
  out.e_l = slice_rows(h2, h2.rows() - config.n_l, config.n_l);
  out.token_logits =
      add_row_bias(matmul(out.e_l, params.out_w), params.out_b);
  return out;
}

std::string decode_explanation(const Tensor& token_logits,
                               const Vocabulary& vocab) {
  if (token_logits.rank() != 2) {
    throw ShapeError("decode_explanation expects [positions x vocab], got " +
                     shape_to_string(token_logits.shape()));
  }
  std::vector<int> ids;
  for (int i = 0; i < token_logits.rows(); ++i) {
    int best = 0;
    double best_v = token_logits.at(i, 0);
    for (int j = 1; j < token_logits.cols(); ++j) {
      if (token_logits.at(i, j) > best_v) {  // ties keep the lowest id
        best_v = token_logits.at(i, j);
        best = j;
      }
    }
    ids.push_back(best);
  }
  return vocab.decode(ids);
}

}  // namespace vlf
