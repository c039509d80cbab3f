#include "vlf/net.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vlf/errors.hpp"
#include "vlf/hash.hpp"
#include "vlf/rng.hpp"
#include "vlf/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vlf {

void ModelConfig::validate() const {
  vlfm.validate();
  if (detector.image_size != encoder.image_size) {
    throw ConfigError("detector and image encoder disagree on input size");
  }
  if (detector.image_size % 8 != 0) {
    throw ConfigError("image size must be divisible by 8 for the 3-stage detector");
  }
  if (encoder.image_size % encoder.patch != 0) {
    throw ConfigError("patch size must divide the image size");
  }
  if (detector.d != vlfm.d) {
    throw ConfigError("final detector channels must equal the fusion dim d");
  }
  if (text.d_t != vlfm.d) {
    throw ConfigError("text hidden dim d_t must equal the fusion dim d");
  }
  if (text.d_v != encoder.d_v) {
    throw ConfigError("projector input dim must match image encoder d_v");
  }
  if (text.c_pen != detector.c2) {
    throw ConfigError("projector input dim must match penultimate channels");
  }
  if (vlfm.grid_h * vlfm.grid_w !=
      detector.final_side() * detector.final_side()) {
    throw ConfigError("fusion grid must match the final detector map");
  }
  if (text.n_l < 1) throw ConfigError("n_l must be >= 1");
  if (text.n_prompt < 1) throw ConfigError("prompt embeddings must be non-empty");
}

void init_detector(ModelState& state, const ModelConfig& config,
                   std::uint64_t seed) {
  state.detector = DetectorParams::init(config.detector, seed);
  state.has_detector = true;
}

void init_text_pathway(ModelState& state, const ModelConfig& config,
                       std::uint64_t seed, const Vocabulary& vocab) {
  TextPathwayConfig tc = config.text;
  tc.vocab = vocab.size();
  state.text = TextPathwayParams::init(tc, seed);
  state.encoder = ImageEncoderParams::init(config.encoder, seed);
  state.vocab = vocab;
  state.has_text = true;
}

void init_vlfm(ModelState& state, const ModelConfig& config,
               std::uint64_t seed) {
  state.vlfm = VlfmParams::init(config.vlfm, seed);
  state.has_vlfm = true;
}

namespace {

void require_group_name(const std::string& group) {
  for (const auto& g : kParameterGroups) {
    if (g == group) return;
  }
  throw ConfigError("unknown parameter group '" + group + "'");
}

void require_initialized(const ModelState& state, const std::string& group) {
  const bool ok = (group == "detector" && state.has_detector) ||
                  (group == "text_pathway" && state.has_text) ||
                  (group == "vlfm" && state.has_vlfm);
  if (!ok) {
    throw PipelineError("parameter group '" + group + "' is not initialized");
  }
}

}  // namespace

std::vector<NamedTensor> group_tensors(ModelState& state,
                                       const std::string& group) {
  require_group_name(group);
  require_initialized(state, group);
  std::vector<NamedTensor> out;
  auto append = [&](const std::string& prefix, std::vector<NamedTensor> list) {
    for (NamedTensor& nt : list) {
      out.push_back({prefix + nt.name, nt.tensor});
    }
  };
  if (group == "detector") {
    append("detector.", state.detector.tensors());
  } else if (group == "text_pathway") {
    append("image_encoder.", state.encoder.tensors());
    append("text.", state.text.tensors());
  } else {
    append("vlfm.", state.vlfm.tensors());
  }
  return out;
}

void set_group_requires_grad(ModelState& state, const std::string& group,
                             bool requires_grad) {
  for (NamedTensor& nt : group_tensors(state, group)) {
    nt.tensor.set_requires_grad(requires_grad);
  }
}

std::string serialize_group(ModelState& state, const std::string& group) {
  std::ostringstream buf(std::ios::binary);
  for (NamedTensor& nt : group_tensors(state, group)) {
    write_tensor(buf, nt.tensor);
  }
  if (group == "text_pathway") {
    write_tensor(buf, state.text.prompt);  // constant, kept for reproducibility
  }
  return buf.str();
}

std::string group_hash(ModelState& state, const std::string& group) {
  return sha256_hex(serialize_group(state, group));
}

void save_checkpoint(const std::string& dir, ModelState& state,
                     const std::string& group, bool frozen) {
  require_group_name(group);
  fs::create_directories(dir);
  const std::string bytes = serialize_group(state, group);
  const fs::path bin = fs::path(dir) / (group + ".bin");
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw DataError("cannot open " + bin.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  json manifest;
  manifest["group"] = group;
  manifest["frozen"] = frozen;
  manifest["sha256"] = sha256_hex(bytes);
  json tensors = json::array();
  for (NamedTensor& nt : group_tensors(state, group)) {
    tensors.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}});
  }
  if (group == "text_pathway") {
    tensors.push_back(
        {{"name", "text.prompt"}, {"shape", state.text.prompt.shape()},
         {"constant", true}});
    manifest["vocab"] = state.vocab.words();
  }
  manifest["tensors"] = tensors;
  std::ofstream mj(fs::path(dir) / (group + ".json"));
  mj << manifest.dump(2) << "\n";
}

bool checkpoint_exists(const std::string& dir, const std::string& group) {
  return fs::exists(fs::path(dir) / (group + ".bin")) &&
         fs::exists(fs::path(dir) / (group + ".json"));
}

void load_checkpoint(const std::string& dir, ModelState& state,
                     const std::string& group) {
  require_group_name(group);
  if (!checkpoint_exists(dir, group)) {
    throw PipelineError("missing checkpoint for group '" + group + "' in " +
                        dir);
  }
  // Vocabulary must be restored before text tensors so shapes line up.
  if (group == "text_pathway") {
    std::ifstream mj(fs::path(dir) / (group + ".json"));
    json manifest;
    mj >> manifest;
    if (manifest.contains("vocab")) {
      std::vector<std::string> words =
          manifest["vocab"].get<std::vector<std::string>>();
      // Stored list includes the reserved tokens; rebuild from the tail.
      std::vector<std::string> rest(words.begin() + 2, words.end());
      state.vocab = Vocabulary(rest);
    }
  }
  require_initialized(state, group);
  std::ifstream in(fs::path(dir) / (group + ".bin"), std::ios::binary);
  for (NamedTensor& nt : group_tensors(state, group)) {
    Tensor loaded = read_tensor(in);
    if (loaded.shape() != nt.tensor.shape()) {
      throw DataError("checkpoint tensor " + nt.name + " has shape " +
                      shape_to_string(loaded.shape()) + ", expected " +
                      shape_to_string(nt.tensor.shape()));
    }
    auto dst = nt.tensor.mutable_data();
    const auto src = loaded.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (group == "text_pathway") {
    Tensor prompt = read_tensor(in);
    if (prompt.shape() != state.text.prompt.shape()) {
      throw DataError("checkpoint prompt block has unexpected shape");
    }
    auto dst = state.text.prompt.mutable_data();
    const auto src = prompt.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::string checkpoint_file_hash(const std::string& dir,
                                 const std::string& group) {
  return sha256_file((fs::path(dir) / (group + ".bin")).string());
}

FrameForward net_forward(const Tensor& image, const ModelState& state,
                         const ModelConfig& config, bool want_trace) {
  if (!state.has_detector || !state.has_text || !state.has_vlfm) {
    throw PipelineError("net_forward requires all three groups initialized");
  }
  FrameForward out;
  out.detector = detect_features(image, state.detector, config.detector);
  out.e_v = encode_image_tokens(image, state.encoder, config.encoder);
  out.e_c = flatten_spatial(out.detector.final_map);

  TextPathwayConfig tc = config.text;
  tc.vocab = state.vocab.size();
  const std::vector<int> question = state.vocab.encode(config.question);
  out.text = text_pathway_forward(out.e_v,
                                  flatten_spatial(out.detector.penultimate),
                                  state.text, tc, question);
  out.vlfm = vlfm_forward(out.e_c, out.text.e_l, state.vlfm, config.vlfm,
                          want_trace);
  return out;
}

double score_frame(const Image& crop, const ModelState& state,
                   const ModelConfig& config) {
  return net_forward(image_to_tensor(crop), state, config).vlfm.score;
}

AttentionMap frame_attention_map(const Image& crop, const ModelState& state,
                                 const ModelConfig& config) {
  const Tensor image = image_to_tensor(crop);
  const FrameForward fwd = net_forward(image, state, config);
  return attention_map(fwd.e_c, fwd.text.e_l, state.vlfm, config.vlfm);
}

}  // namespace vlf
