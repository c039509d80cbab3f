#include "vlf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vlf/errors.hpp"
#include "vlf/hash.hpp"
#include "vlf/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vlf {

int train_identity_count(int identities, double fraction) {
  const int count = static_cast<int>(std::floor(identities * fraction));
  return std::clamp(count, 1, identities - 1);
}

Corpus corpus_from_videos(const std::vector<ToyVideo>& videos,
                          const CorpusParams& params, std::uint64_t seed,
                          const std::string& dir) {
  Corpus corpus;
  corpus.params = params;
  corpus.seed = seed;
  for (const ToyVideo& v : videos) {
    VideoRecord rec;
    rec.id = v.video_id();
    rec.identity = v.identity;
    rec.label = v.label;
    rec.method = v.method;
    rec.path = (fs::path(dir) / "videos" / rec.id).string();
    rec.frames = v.frame_count();
    rec.face_boxes = v.face_boxes;
    rec.artifact_boxes = v.artifact_boxes;
    corpus.videos.push_back(std::move(rec));
  }
  return corpus;
}

std::string videos_content_hash(const std::vector<ToyVideo>& videos) {
  std::string acc;
  for (const ToyVideo& v : videos) {
    acc += v.video_id();
    for (const Image& frame : v.frames) acc += hash_image(frame);
  }
  return sha256_hex(acc);
}

PipelineContext build_context(const RunConfig& config,
                              const std::string& out_dir, LlmClient* client) {
  config.validate();
  fs::create_directories(out_dir);
  PipelineContext ctx;
  ctx.config = config;

  const std::vector<ToyVideo> all =
      generate_corpus(config.corpus, config.seed);
  const int train_ids =
      train_identity_count(config.corpus.identities, config.train_fraction);
  for (const ToyVideo& v : all) {
    (v.identity < train_ids ? ctx.train_videos : ctx.test_videos).push_back(v);
  }

  CorpusParams cross_params = config.corpus;
  cross_params.identities = config.eval.cross_identities;
  cross_params.artifact_strength = config.eval.cross_artifact_strength;
  ctx.cross_videos =
      generate_corpus(cross_params, config.seed + config.eval.cross_seed_offset);

  ctx.corpus_meta = corpus_from_videos(all, config.corpus, config.seed, out_dir);

  ctx.annotations_path = (fs::path(out_dir) / "annotations.jsonl").string();
  const std::string quarantine =
      (fs::path(out_dir) / "annotations.quarantine.jsonl").string();
  std::unique_ptr<MockLlmClient> mock;
  if (client == nullptr) {
    mock = std::make_unique<MockLlmClient>(ctx.corpus_meta);
    client = mock.get();
  }
  annotate_corpus(ctx.corpus_meta, *client, config.annotation,
                  ctx.annotations_path, quarantine);

  for (AnnotationRecord& r : load_annotations(ctx.annotations_path)) {
    // Identity is encoded in the video id (idNNN_*).
    const int identity = std::stoi(r.video_id.substr(2, 3));
    (identity < train_ids ? ctx.train_records : ctx.held_records)
        .push_back(std::move(r));
  }

  std::vector<std::string> texts;
  texts.push_back(kFixedQuestion);
  for (const AnnotationRecord& r : ctx.train_records) texts.push_back(r.answer);
  ctx.vocab = Vocabulary::build(texts);
  return ctx;
}

std::vector<FrameSample> build_classification_data(
    const std::vector<ToyVideo>& videos, const RunConfig& config) {
  std::vector<FrameSample> samples;
  const SamplingPolicy& policy = config.sampling;
  for (const ToyVideo& video : videos) {
    if (config.protocol == "cross") {
      // Self-blend protocol: reals only; each sampled frame contributes the
      // pristine crop and its blended pseudo-fake.
      if (video.label != "real") continue;
      for (const int idx : even_indices(video.frame_count(), policy.sbi_frames)) {
        FrameSample real;
        real.frame = video.frames[idx];
        real.face_box = video.face_boxes[idx];
        real.label = 0;
        samples.push_back(real);
        FrameSample blend = real;
        blend.apply_self_blend = true;
        blend.label = 1;
        samples.push_back(std::move(blend));
      }
      continue;
    }
    const int budget =
        video.label == "real" ? policy.real_frames : policy.fake_frames;
    for (const int idx : even_indices(video.frame_count(), budget)) {
      FrameSample s;
      s.frame = video.frames[idx];
      s.face_box = video.face_boxes[idx];
      s.label = video.label == "fake" ? 1 : 0;
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw DataError("classification split produced no samples");
  return samples;
}

std::vector<FrameSample> build_sft_data(
    const std::vector<AnnotationRecord>& records,
    const std::vector<ToyVideo>& videos, const Vocabulary& vocab, int n_l) {
  std::map<std::string, const ToyVideo*> by_id;
  for (const ToyVideo& v : videos) by_id[v.video_id()] = &v;
  std::vector<FrameSample> samples;
  for (const AnnotationRecord& r : records) {
    const auto it = by_id.find(r.video_id);
    if (it == by_id.end()) continue;  // record for a video outside this split
    const ToyVideo& video = *it->second;
    if (r.frame_idx < 0 || r.frame_idx >= video.frame_count()) {
      throw DataError("annotation for " + r.video_id + " frame " +
                      std::to_string(r.frame_idx) + " out of range");
    }
    FrameSample s;
    s.frame = video.frames[r.frame_idx];
    s.face_box = video.face_boxes[r.frame_idx];
    s.label = r.label == "fake" ? 1 : 0;
    s.target_tokens = vocab.encode(r.answer, n_l);
    s.target_mask.resize(s.target_tokens.size());
    for (std::size_t i = 0; i < s.target_tokens.size(); ++i) {
      s.target_mask[i] = s.target_tokens[i] != vocab.pad_id() ? 1 : 0;
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DataError("SFT split produced no samples");
  return samples;
}

namespace {

double decode_prefix_accuracy(const ModelState& state, const ModelConfig& config,
                              const std::vector<AnnotationRecord>& records,
                              const std::vector<ToyVideo>& videos,
                              const SamplingPolicy& policy) {
  std::map<std::string, const ToyVideo*> by_id;
  for (const ToyVideo& v : videos) by_id[v.video_id()] = &v;
  int correct = 0, total = 0;
  for (const AnnotationRecord& r : records) {
    const auto it = by_id.find(r.video_id);
    if (it == by_id.end()) continue;
    const ToyVideo& video = *it->second;
    const Image& frame = video.frames[r.frame_idx];
    const WindowD window =
        expand_box(video.face_boxes[r.frame_idx], policy.eval_margin,
                   frame.width, frame.height);
    const Image crop = crop_resize(frame, window, config.detector.image_size);
    const FrameForward fwd =
        net_forward(image_to_tensor(crop), state, config);
    const std::string decoded =
        decode_explanation(fwd.text.token_logits, state.vocab);
    const bool says_fake = decoded.starts_with("Yes");
    const bool says_real = decoded.starts_with("No");
    const bool is_fake = r.label == "fake";
    if ((is_fake && says_fake) || (!is_fake && says_real)) ++correct;
    ++total;
  }
  return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

struct StageRun {
  std::string name;
  std::vector<EpochMetrics> metrics;
};

}  // namespace

void save_model_state(const std::string& dir, ModelState& state,
                      const std::map<std::string, bool>& frozen) {
  for (const std::string& group : kParameterGroups) {
    const bool initialized = (group == "detector" && state.has_detector) ||
                             (group == "text_pathway" && state.has_text) ||
                             (group == "vlfm" && state.has_vlfm);
    if (!initialized) continue;
    const auto it = frozen.find(group);
    save_checkpoint(dir, state, group, it != frozen.end() && it->second);
  }
}

ModelState load_model_state(const std::string& dir, const ModelConfig& config) {
  ModelState state;
  if (checkpoint_exists(dir, "detector")) {
    init_detector(state, config, 0);
    load_checkpoint(dir, state, "detector");
  }
  if (checkpoint_exists(dir, "text_pathway")) {
    // Vocabulary lives in the manifest and fixes the embedding shapes.
    std::ifstream mj(fs::path(dir) / "text_pathway.json");
    json manifest;
    mj >> manifest;
    std::vector<std::string> words =
        manifest.at("vocab").get<std::vector<std::string>>();
    Vocabulary vocab(std::vector<std::string>(words.begin() + 2, words.end()));
    init_text_pathway(state, config, 0, vocab);
    load_checkpoint(dir, state, "text_pathway");
  }
  if (checkpoint_exists(dir, "vlfm")) {
    init_vlfm(state, config, 0);
    load_checkpoint(dir, state, "vlfm");
  }
  return state;
}

PipelineResult run_pipeline(const RunConfig& config, const std::string& out_dir,
                            LlmClient* client, ModelState* out_state) {
  PipelineContext ctx = build_context(config, out_dir, client);
  const ModelConfig mc = config.model_config();
  const std::string ckpt_dir = (fs::path(out_dir) / "checkpoints").string();

  ModelState state;
  PipelineResult result;
  result.checkpoint_dir = ckpt_dir;

  const std::vector<FrameSample> cls_data =
      build_classification_data(ctx.train_videos, config);

  std::vector<StageRun> runs;
  if (config.strategy == "three_stage") {
    init_detector(state, mc, config.seed);
    runs.push_back({"stage1", run_stage(config.stage_config(1), cls_data, state,
                                        mc, config.seed)});
    save_checkpoint(ckpt_dir, state, "detector", false);
    const std::string detector_hash = group_hash(state, "detector");

    init_text_pathway(state, mc, config.seed, ctx.vocab);
    const std::vector<FrameSample> sft_data = build_sft_data(
        ctx.train_records, ctx.train_videos, ctx.vocab, mc.text.n_l);
    runs.push_back({"stage2", run_stage(config.stage_config(2), sft_data, state,
                                        mc, config.seed)});
    if (group_hash(state, "detector") != detector_hash) {
      throw PipelineError("freeze contract violated: detector changed in stage 2");
    }
    save_checkpoint(ckpt_dir, state, "text_pathway", false);
    const std::string text_hash = group_hash(state, "text_pathway");

    init_vlfm(state, mc, config.seed);
    runs.push_back({"stage3", run_stage(config.stage_config(3), cls_data, state,
                                        mc, config.seed)});
    if (group_hash(state, "detector") != detector_hash ||
        group_hash(state, "text_pathway") != text_hash) {
      throw PipelineError("freeze contract violated in stage 3");
    }
    save_checkpoint(ckpt_dir, state, "detector", true);
    save_checkpoint(ckpt_dir, state, "text_pathway", true);
    save_checkpoint(ckpt_dir, state, "vlfm", false);
  } else {
    // Table-7 strategies share the data; they differ in grouping and losses.
    init_detector(state, mc, config.seed);
    init_text_pathway(state, mc, config.seed, ctx.vocab);
    init_vlfm(state, mc, config.seed);
    std::vector<FrameSample> merged = cls_data;
    const std::vector<FrameSample> sft_data = build_sft_data(
        ctx.train_records, ctx.train_videos, ctx.vocab, mc.text.n_l);
    merged.insert(merged.end(), sft_data.begin(), sft_data.end());

    if (config.strategy == "one_stage") {
      TrainOptions options;
      options.losses = {LossTerm::DetectorCE, LossTerm::Sft, LossTerm::VlfmCE};
      options.trainable = {"detector", "text_pathway", "vlfm"};
      options.epochs = config.stage1.epochs;
      options.batch = config.stage1.batch;
      options.lr = config.stage1.lr;
      options.decay_start = config.stage1.decay_start;
      options.weight_decay = config.stage1.weight_decay;
      options.seed = mix_seed(config.seed, "one_stage");
      options.image_size = mc.detector.image_size;
      options.train_margin_lo = config.sampling.train_margin_lo;
      options.train_margin_hi = config.sampling.train_margin_hi;
      runs.push_back({"one_stage", run_training(state, mc, merged, options)});
    } else {  // two_stage
      runs.push_back({"stage1", run_stage(config.stage_config(1), cls_data,
                                          state, mc, config.seed)});
      const std::string detector_hash = group_hash(state, "detector");
      TrainOptions options;
      options.losses = {LossTerm::Sft, LossTerm::VlfmCE};
      options.trainable = {"text_pathway", "vlfm"};
      options.epochs = config.stage2.epochs;
      options.batch = config.stage2.batch;
      options.lr = config.stage2.lr;
      options.decay_start = config.stage2.decay_start;
      options.weight_decay = config.stage2.weight_decay;
      options.seed = mix_seed(config.seed, "two_stage_joint");
      options.image_size = mc.detector.image_size;
      options.train_margin_lo = config.sampling.train_margin_lo;
      options.train_margin_hi = config.sampling.train_margin_hi;
      runs.push_back({"joint", run_training(state, mc, merged, options)});
      if (group_hash(state, "detector") != detector_hash) {
        throw PipelineError("freeze contract violated in two-stage joint phase");
      }
    }
    save_checkpoint(ckpt_dir, state, "detector", config.strategy == "two_stage");
    save_checkpoint(ckpt_dir, state, "text_pathway", false);
    save_checkpoint(ckpt_dir, state, "vlfm", false);
  }

  for (const StageRun& run : runs) {
    result.metrics[run.name] = run.metrics;
    write_metrics_csv(
        (fs::path(out_dir) / ("metrics_" + run.name + ".csv")).string(),
        run.metrics);
  }
  for (const std::string& group : kParameterGroups) {
    result.checkpoint_hashes[group] = checkpoint_file_hash(ckpt_dir, group);
  }

  result.intra = evaluate_videos(ctx.test_videos, state, mc, config.sampling);
  result.cross = evaluate_videos(ctx.cross_videos, state, mc, config.sampling);
  result.decode_prefix_accuracy = decode_prefix_accuracy(
      state, mc, ctx.held_records, ctx.test_videos, config.sampling);

  json manifest;
  manifest["command"] = "train";
  manifest["seed"] = config.seed;
  manifest["config"] = to_json(config);
  manifest["corpus_hash"] = videos_content_hash(ctx.train_videos) +
                            videos_content_hash(ctx.test_videos);
  manifest["checkpoint_hashes"] = result.checkpoint_hashes;
  manifest["auc"] = {{"intra", result.intra.auc_all},
                     {"cross", result.cross.auc_all}};
  manifest["decode_prefix_accuracy"] = result.decode_prefix_accuracy;
  result.manifest = manifest;
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";

  if (out_state != nullptr) *out_state = std::move(state);
  return result;
}

EvalResult retrain_vlfm_and_eval(ModelState state, PipelineContext& context,
                                 const RunConfig& variant,
                                 const std::vector<ToyVideo>& eval_videos) {
  const ModelConfig mc = variant.model_config();
  init_vlfm(state, mc, variant.seed);
  const std::vector<FrameSample> cls_data =
      build_classification_data(context.train_videos, variant);
  run_stage(variant.stage_config(3), cls_data, state, mc, variant.seed);
  return evaluate_videos(eval_videos, state, mc, variant.sampling);
}

// ---- ablation ----------------------------------------------------------------------

AblationGrid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed grid " + path + ": " + e.what());
  }
  AblationGrid grid;
  grid.name = j.value("name", fs::path(path).stem().string());
  for (const json& cell : j.at("cells")) {
    AblationCell c;
    c.id = cell.at("id").get<std::string>();
    c.overrides = cell.value("overrides", json::object());
    grid.cells.push_back(std::move(c));
  }
  if (grid.cells.empty()) throw ConfigError("grid has no cells");
  return grid;
}

AblationReport run_ablation(const AblationGrid& grid, const RunConfig& base,
                            const std::string& out_dir, LlmClient* client) {
  fs::create_directories(out_dir);
  AblationReport report;
  report.grid_name = grid.name;

  json manifest;
  manifest["grid"] = grid.name;
  manifest["seed"] = base.seed;
  json cells_json = json::array();

  for (const AblationCell& cell : grid.cells) {
    AblationCellResult r;
    r.id = cell.id;
    json cell_json;
    cell_json["id"] = cell.id;
    cell_json["overrides"] = cell.overrides;
    try {
      const RunConfig variant = apply_overrides(base, cell.overrides);
      const std::string cell_dir = (fs::path(out_dir) / cell.id).string();
      const PipelineResult res = run_pipeline(variant, cell_dir, client);
      r.ok = true;
      r.auc_intra = res.intra.auc_all;
      r.auc_cross = res.cross.auc_all;
      r.auc_average = 0.5 * (r.auc_intra + r.auc_cross);
      cell_json["auc"] = {{"intra", r.auc_intra},
                          {"cross", r.auc_cross},
                          {"average", r.auc_average}};
      cell_json["checkpoint_hashes"] = res.checkpoint_hashes;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
      cell_json["error"] = r.error;
    }
    cells_json.push_back(std::move(cell_json));
    report.cells.push_back(std::move(r));
  }
  manifest["cells"] = cells_json;

  report.csv_path = (fs::path(out_dir) / "report.csv").string();
  std::ofstream csv(report.csv_path);
  csv << "cell,split,auc\n";
  char buf[160];
  for (const AblationCellResult& r : report.cells) {
    if (!r.ok) {
      csv << r.id << ",error,\n";
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%s,intra,%.17g\n", r.id.c_str(), r.auc_intra);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "%s,cross,%.17g\n", r.id.c_str(), r.auc_cross);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "%s,average,%.17g\n", r.id.c_str(),
                  r.auc_average);
    csv << buf;
  }
  csv.close();

  report.manifest_path = (fs::path(out_dir) / "report.json").string();
  std::ofstream mf(report.manifest_path);
  mf << manifest.dump(2) << "\n";
  return report;
}

std::vector<std::string> export_attention_maps(
    const ModelState& state, const ModelConfig& config,
    const std::vector<ToyVideo>& videos, const SamplingPolicy& policy,
    const std::string& out_dir, int max_maps) {
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const ToyVideo& video : videos) {
    if (video.label != "fake") continue;
    if (static_cast<int>(paths.size()) >= max_maps) break;
    const int idx = video.frame_count() / 2;
    const Image& frame = video.frames[idx];
    const WindowD window = expand_box(video.face_boxes[idx], policy.eval_margin,
                                      frame.width, frame.height);
    const Image crop = crop_resize(frame, window, config.detector.image_size);
    const AttentionMap map = frame_attention_map(crop, state, config);
    const std::string path =
        (fs::path(out_dir) / (video.video_id() + "_f" + std::to_string(idx) +
                              ".pgm"))
            .string();
    write_attention_map(path, map);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace vlf
