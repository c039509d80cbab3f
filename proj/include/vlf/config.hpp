#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "vlf/annotate.hpp"
#include "vlf/dataset.hpp"
#include "vlf/net.hpp"
#include "vlf/training.hpp"

namespace vlf {

struct StageDefaults {
  int epochs = 10;
  int batch = 32;
  double lr = 5e-5;
  int decay_start = -1;
  double weight_decay = 0.01;
};

struct ModelDims {
  int image_size = 32;
  int d = 32;
  int d_t = 32;  // must equal d; kept as an explicit knob
  int d_v = 24;
  int n_l = 8;
  int n_prompt = 4;
  int patch = 8;
  int c1 = 12;
  int c2 = 16;
  int fusion_layers = 2;
  int heads = 4;
  std::string fusion_mode = "elementwise_product";
  bool img_to_text = true;
  bool text_to_img = true;
  bool use_detector_tokens = true;
};

struct ClientConfig {
  std::string kind = "mock";  // mock | http
  HttpClientConfig http;
};

struct EvalSplitConfig {
  std::uint64_t cross_seed_offset = 1000;
  int cross_identities = 10;
  double cross_artifact_strength = 0.7;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string protocol = "intra";        // intra | cross
  std::string strategy = "three_stage";  // one_stage | two_stage | three_stage
  CorpusParams corpus;
  double train_fraction = 0.7;
  ModelDims model;
  StageDefaults stage1{30, 32, 2e-3, 15, 0.01};
  StageDefaults stage2{40, 16, 2e-3, 20, 0.01};
  StageDefaults stage3{30, 32, 2e-3, 15, 0.01};
  int lora_rank = 128;   // echoed in manifests; stand-ins train directly
  int lora_alpha = 256;
  int accumulation_steps = 1;
  SamplingPolicy sampling;
  AnnotationConfig annotation;
  ClientConfig client;
  EvalSplitConfig eval;

  ModelConfig model_config() const;
  StageConfig stage_config(int stage) const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);  // accepts run manifests too
RunConfig apply_overrides(const RunConfig& base, const nlohmann::json& patch);

}  // namespace vlf
