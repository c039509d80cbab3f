#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlf/encoders.hpp"
#include "vlf/fusion.hpp"
#include "vlf/image.hpp"

namespace vlf {

inline const std::vector<std::string> kParameterGroups = {"detector",
                                                          "text_pathway",
                                                          "vlfm"};

// Dimension contract across the sub-models.
struct ModelConfig {
  DetectorConfig detector;
  ImageEncoderConfig encoder;
  TextPathwayConfig text;
  VlfmConfig vlfm;
  std::string question = "Is this image manipulated?";

  void validate() const;
};

// All learnable parameters, partitioned into the three freezable groups. The
// image encoder and projectors belong to the text-pathway group (they are
// trained together in stage 2).
struct ModelState {
  DetectorParams detector;
  ImageEncoderParams encoder;
  TextPathwayParams text;
  VlfmParams vlfm;
  Vocabulary vocab;
  bool has_detector = false;
  bool has_text = false;
  bool has_vlfm = false;
};

void init_detector(ModelState& state, const ModelConfig& config,
                   std::uint64_t seed);
void init_text_pathway(ModelState& state, const ModelConfig& config,
                       std::uint64_t seed, const Vocabulary& vocab);
void init_vlfm(ModelState& state, const ModelConfig& config,
               std::uint64_t seed);

// Trainable tensors of one group, names prefixed with the group.
std::vector<NamedTensor> group_tensors(ModelState& state,
                                       const std::string& group);
void set_group_requires_grad(ModelState& state, const std::string& group,
                             bool requires_grad);

// Serialized bytes of a group: concatenated VLFT records in tensors() order
// (the text group appends its constant prompt block).
std::string serialize_group(ModelState& state, const std::string& group);
std::string group_hash(ModelState& state, const std::string& group);

// Checkpoint = <group>.bin (tensor records) + <group>.json manifest holding
// the group name, shapes, freeze flag and content hash.
void save_checkpoint(const std::string& dir, ModelState& state,
                     const std::string& group, bool frozen);
// Requires the matching group to be initialized (shape source of truth).
void load_checkpoint(const std::string& dir, ModelState& state,
                     const std::string& group);
bool checkpoint_exists(const std::string& dir, const std::string& group);
std::string checkpoint_file_hash(const std::string& dir,
                                 const std::string& group);

// ---- full network forward ----------------------------------------------------

struct FrameForward {
  DetectorOut detector;
  Tensor e_v;
  Tensor e_c;  // flattened final detector map
  TextPathwayOut text;
  VlfmOut vlfm;
};

FrameForward net_forward(const Tensor& image, const ModelState& state,
                         const ModelConfig& config, bool want_trace = false);

// Fakeness score for one cropped frame (no gradient bookkeeping).
double score_frame(const Image& crop, const ModelState& state,
                   const ModelConfig& config);

AttentionMap frame_attention_map(const Image& crop, const ModelState& state,
                                 const ModelConfig& config);

}  // namespace vlf
