#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlf/annotate.hpp"
#include "vlf/config.hpp"
#include "vlf/eval.hpp"

namespace vlf {

// Everything the stages consume, derived deterministically from the config:
// corpora for both seed families, annotations, the identity split and the
// vocabulary (built from training-split answers only).
struct PipelineContext {
  RunConfig config;
  std::vector<ToyVideo> train_videos;
  std::vector<ToyVideo> test_videos;   // held-out identities, same family
  std::vector<ToyVideo> cross_videos;  // shifted family, reduced contrast
  Corpus corpus_meta;                  // all identities of the train family
  std::vector<AnnotationRecord> train_records;
  std::vector<AnnotationRecord> held_records;
  Vocabulary vocab;
  std::string annotations_path;
};

// Splits by identity: the first floor(N * fraction) identities train.
int train_identity_count(int identities, double fraction);

// Corpus metadata for in-memory videos (paths refer to where write_corpus
// would place frames; the mock client only needs ids and boxes).
Corpus corpus_from_videos(const std::vector<ToyVideo>& videos,
                          const CorpusParams& params, std::uint64_t seed,
                          const std::string& dir = "");

std::string videos_content_hash(const std::vector<ToyVideo>& videos);

// Builds annotations via the client (mock when null) and assembles the
// context. Annotation files land under out_dir.
PipelineContext build_context(const RunConfig& config,
                              const std::string& out_dir,
                              LlmClient* client = nullptr);

// Frame/label samples for the CE stages; honors the protocol (intra uses
// real+fake frames, cross uses reals plus their self-blends).
std::vector<FrameSample> build_classification_data(
    const std::vector<ToyVideo>& videos, const RunConfig& config);

// Annotation-driven SFT samples for stage 2.
std::vector<FrameSample> build_sft_data(
    const std::vector<AnnotationRecord>& records,
    const std::vector<ToyVideo>& videos, const Vocabulary& vocab, int n_l);

struct PipelineResult {
  std::map<std::string, std::vector<EpochMetrics>> metrics;
  std::map<std::string, std::string> checkpoint_hashes;
  EvalResult intra;
  EvalResult cross;
  double decode_prefix_accuracy = 0.0;  // held-out identities
  std::string checkpoint_dir;
  nlohmann::json manifest;
};

// Full run: staged training per the configured strategy, checkpoints, both
// evaluations, metrics CSVs and a run manifest under out_dir.
PipelineResult run_pipeline(const RunConfig& config, const std::string& out_dir,
                            LlmClient* client = nullptr,
                            ModelState* out_state = nullptr);

// Re-trains only the fusion stage on an existing context + stage-1/2 state,
// then evaluates. Used by ablation cells that only touch the VLFM.
EvalResult retrain_vlfm_and_eval(ModelState state, PipelineContext& context,
                                 const RunConfig& variant,
                                 const std::vector<ToyVideo>& eval_videos);

// ---- ablation grids ------------------------------------------------------------

struct AblationCell {
  std::string id;
  nlohmann::json overrides;
};

struct AblationGrid {
  std::string name;
  std::vector<AblationCell> cells;
};

AblationGrid load_grid(const std::string& path);

struct AblationCellResult {
  std::string id;
  bool ok = false;
  std::string error;
  double auc_intra = 0.0;
  double auc_cross = 0.0;
  double auc_average = 0.0;
};

struct AblationReport {
  std::string grid_name;
  std::vector<AblationCellResult> cells;
  std::string csv_path;
  std::string manifest_path;
};

// Runs every cell under the shared seed; failures are recorded and the grid
// continues. Writes report CSV + JSON manifest under out_dir.
AblationReport run_ablation(const AblationGrid& grid, const RunConfig& base,
                            const std::string& out_dir,
                            LlmClient* client = nullptr);

// ---- model persistence -----------------------------------------------------------

void save_model_state(const std::string& dir, ModelState& state,
                      const std::map<std::string, bool>& frozen);
ModelState load_model_state(const std::string& dir, const ModelConfig& config);

// Attention-map export for sample fake frames (PGM + JSON sidecar per frame).
std::vector<std::string> export_attention_maps(
    const ModelState& state, const ModelConfig& config,
    const std::vector<ToyVideo>& videos, const SamplingPolicy& policy,
    const std::string& out_dir, int max_maps);

}  // namespace vlf
