#include "vlf/config.hpp"

#include <fstream>

#include "vlf/errors.hpp"

using nlohmann::json;

namespace vlf {

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.detector.image_size = model.image_size;
  mc.detector.c1 = model.c1;
  mc.detector.c2 = model.c2;
  mc.detector.d = model.d;
  mc.encoder.image_size = model.image_size;
  mc.encoder.patch = model.patch;
  mc.encoder.d_v = model.d_v;
  mc.text.d_t = model.d_t;
  mc.text.n_prompt = model.n_prompt;
  mc.text.n_l = model.n_l;
  mc.text.d_v = model.d_v;
  mc.text.c_pen = model.c2;
  mc.text.use_detector_tokens = model.use_detector_tokens;
  mc.vlfm.d = model.d;
  mc.vlfm.layers = model.fusion_layers;
  mc.vlfm.heads = model.heads;
  mc.vlfm.mode = fusion_mode_from_string(model.fusion_mode);
  mc.vlfm.img_to_text = model.img_to_text;
  mc.vlfm.text_to_img = model.text_to_img;
  mc.vlfm.grid_h = mc.detector.final_side();
  mc.vlfm.grid_w = mc.detector.final_side();
  return mc;
}

StageConfig RunConfig::stage_config(int stage) const {
  StageConfig sc = StageConfig::canonical(stage);
  const StageDefaults& d = stage == 1 ? stage1 : (stage == 2 ? stage2 : stage3);
  sc.epochs = d.epochs;
  sc.batch = d.batch;
  sc.lr = d.lr;
  sc.decay_start = d.decay_start;
  sc.weight_decay = d.weight_decay;
  return sc;
}

void RunConfig::validate() const {
  if (protocol != "intra" && protocol != "cross") {
    throw ConfigError("protocol must be 'intra' or 'cross'");
  }
  if (strategy != "one_stage" && strategy != "two_stage" &&
      strategy != "three_stage") {
    throw ConfigError("strategy must be one_stage, two_stage or three_stage");
  }
  if (model.d != model.d_t) {
    throw ConfigError("d_t must equal d: the text pathway feeds the fusion "
                      "module directly");
  }
  if (corpus.identities < 2) {
    throw ConfigError("corpus needs at least 2 identities");
  }
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (client.kind != "mock" && client.kind != "http") {
    throw ConfigError("client kind must be 'mock' or 'http'");
  }
  model_config().validate();
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["protocol"] = c.protocol;
  j["strategy"] = c.strategy;
  j["corpus"] = {{"identities", c.corpus.identities},
                 {"image_size", c.corpus.image_size},
                 {"min_frames", c.corpus.min_frames},
                 {"max_frames", c.corpus.max_frames},
                 {"artifact_strength", c.corpus.artifact_strength}};
  j["train_fraction"] = c.train_fraction;
  j["model"] = {{"image_size", c.model.image_size},
                {"d", c.model.d},
                {"d_t", c.model.d_t},
                {"d_v", c.model.d_v},
                {"n_l", c.model.n_l},
                {"n_prompt", c.model.n_prompt},
                {"patch", c.model.patch},
                {"c1", c.model.c1},
                {"c2", c.model.c2},
                {"fusion_layers", c.model.fusion_layers},
                {"heads", c.model.heads},
                {"fusion_mode", c.model.fusion_mode},
                {"img_to_text", c.model.img_to_text},
                {"text_to_img", c.model.text_to_img},
                {"use_detector_tokens", c.model.use_detector_tokens}};
  auto stage_json = [](const StageDefaults& s) {
    return json{{"epochs", s.epochs},
                {"batch", s.batch},
                {"lr", s.lr},
                {"decay_start", s.decay_start},
                {"weight_decay", s.weight_decay}};
  };
  j["stage1"] = stage_json(c.stage1);
  j["stage2"] = stage_json(c.stage2);
  j["stage3"] = stage_json(c.stage3);
  j["lora"] = {{"rank", c.lora_rank}, {"alpha", c.lora_alpha}};
  j["accumulation_steps"] = c.accumulation_steps;
  j["sampling"] = {{"real_frames", c.sampling.real_frames},
                   {"fake_frames", c.sampling.fake_frames},
                   {"sbi_frames", c.sampling.sbi_frames},
                   {"train_margin",
                    json::array({c.sampling.train_margin_lo,
                                 c.sampling.train_margin_hi})},
                   {"eval_margin", c.sampling.eval_margin}};
  j["annotation"] = {{"pairs_per_method", c.annotation.pairs_per_method},
                     {"use_cfad", c.annotation.use_cfad},
                     {"use_mts", c.annotation.use_mts},
                     {"max_retries", c.annotation.max_retries},
                     {"parallelism", c.annotation.parallelism}};
  j["client"] = {{"kind", c.client.kind},
                 {"endpoint", c.client.http.endpoint},
                 {"auth_env_var", c.client.http.auth_env_var},
                 {"model", c.client.http.model},
                 {"requests_per_minute", c.client.http.requests_per_minute},
                 {"max_retries", c.client.http.max_retries}};
  j["eval"] = {{"cross_seed_offset", c.eval.cross_seed_offset},
               {"cross_identities", c.eval.cross_identities},
               {"cross_artifact_strength", c.eval.cross_artifact_strength}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.protocol = j.value("protocol", c.protocol);
  c.strategy = j.value("strategy", c.strategy);
  if (j.contains("corpus")) {
    const json& k = j["corpus"];
    c.corpus.identities = k.value("identities", c.corpus.identities);
    c.corpus.image_size = k.value("image_size", c.corpus.image_size);
    c.corpus.min_frames = k.value("min_frames", c.corpus.min_frames);
    c.corpus.max_frames = k.value("max_frames", c.corpus.max_frames);
    c.corpus.artifact_strength =
        k.value("artifact_strength", c.corpus.artifact_strength);
  }
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  if (j.contains("model")) {
    const json& k = j["model"];
    c.model.image_size = k.value("image_size", c.model.image_size);
    c.model.d = k.value("d", c.model.d);
    c.model.d_t = k.value("d_t", c.model.d);  // follows d unless overridden
    c.model.d_v = k.value("d_v", c.model.d_v);
    c.model.n_l = k.value("n_l", c.model.n_l);
    c.model.n_prompt = k.value("n_prompt", c.model.n_prompt);
    c.model.patch = k.value("patch", c.model.patch);
    c.model.c1 = k.value("c1", c.model.c1);
    c.model.c2 = k.value("c2", c.model.c2);
    c.model.fusion_layers = k.value("fusion_layers", c.model.fusion_layers);
    c.model.heads = k.value("heads", c.model.heads);
    c.model.fusion_mode = k.value("fusion_mode", c.model.fusion_mode);
    c.model.img_to_text = k.value("img_to_text", c.model.img_to_text);
    c.model.text_to_img = k.value("text_to_img", c.model.text_to_img);
    c.model.use_detector_tokens =
        k.value("use_detector_tokens", c.model.use_detector_tokens);
  }
  auto stage_from = [](const json& k, StageDefaults s) {
    s.epochs = k.value("epochs", s.epochs);
    s.batch = k.value("batch", s.batch);
    s.lr = k.value("lr", s.lr);
    s.decay_start = k.value("decay_start", s.decay_start);
    s.weight_decay = k.value("weight_decay", s.weight_decay);
    return s;
  };
  if (j.contains("stage1")) c.stage1 = stage_from(j["stage1"], c.stage1);
  if (j.contains("stage2")) c.stage2 = stage_from(j["stage2"], c.stage2);
  if (j.contains("stage3")) c.stage3 = stage_from(j["stage3"], c.stage3);
  if (j.contains("lora")) {
    c.lora_rank = j["lora"].value("rank", c.lora_rank);
    c.lora_alpha = j["lora"].value("alpha", c.lora_alpha);
  }
  c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
  if (j.contains("sampling")) {
    const json& k = j["sampling"];
    c.sampling.real_frames = k.value("real_frames", c.sampling.real_frames);
    c.sampling.fake_frames = k.value("fake_frames", c.sampling.fake_frames);
    c.sampling.sbi_frames = k.value("sbi_frames", c.sampling.sbi_frames);
    if (k.contains("train_margin")) {
      c.sampling.train_margin_lo = k["train_margin"].at(0).get<double>();
      c.sampling.train_margin_hi = k["train_margin"].at(1).get<double>();
    }
    c.sampling.eval_margin = k.value("eval_margin", c.sampling.eval_margin);
  }
  if (j.contains("annotation")) {
    const json& k = j["annotation"];
    c.annotation.pairs_per_method =
        k.value("pairs_per_method", c.annotation.pairs_per_method);
    c.annotation.use_cfad = k.value("use_cfad", c.annotation.use_cfad);
    c.annotation.use_mts = k.value("use_mts", c.annotation.use_mts);
    c.annotation.max_retries = k.value("max_retries", c.annotation.max_retries);
    c.annotation.parallelism = k.value("parallelism", c.annotation.parallelism);
  }
  if (j.contains("client")) {
    const json& k = j["client"];
    c.client.kind = k.value("kind", c.client.kind);
    c.client.http.endpoint = k.value("endpoint", c.client.http.endpoint);
    c.client.http.auth_env_var =
        k.value("auth_env_var", c.client.http.auth_env_var);
    c.client.http.model = k.value("model", c.client.http.model);
    c.client.http.requests_per_minute =
        k.value("requests_per_minute", c.client.http.requests_per_minute);
    c.client.http.max_retries = k.value("max_retries", c.client.http.max_retries);
  }
  if (j.contains("eval")) {
    const json& k = j["eval"];
    c.eval.cross_seed_offset =
        k.value("cross_seed_offset", c.eval.cross_seed_offset);
    c.eval.cross_identities =
        k.value("cross_identities", c.eval.cross_identities);
    c.eval.cross_artifact_strength =
        k.value("cross_artifact_strength", c.eval.cross_artifact_strength);
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
  // Run manifests embed the effective config; accept them directly.
  if (j.contains("config")) j = j["config"];
  return run_config_from_json(j);
}

RunConfig apply_overrides(const RunConfig& base, const json& patch) {
  json merged = to_json(base);
  merged.merge_patch(patch);
  return run_config_from_json(merged);
}

}  // namespace vlf
