#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vlf/dataset.hpp"
#include "vlf/net.hpp"

namespace vlf {

// ---- schedules and sampling ---------------------------------------------------

struct LrSchedule {
  int total_epochs = 0;
  double initial_lr = 5e-5;
  int decay_start = 0;  // epochs before this keep the initial rate
};

// Constant until decay_start, then linear to exactly zero at total_epochs.
double lr_schedule(int epoch, const LrSchedule& schedule);

struct SamplingPolicy {
  int real_frames = 32;
  int fake_frames = 8;
  int sbi_frames = 8;  // frames per real video under the self-blend protocol
  double train_margin_lo = 0.04;
  double train_margin_hi = 0.20;
  double eval_margin = 0.125;
};

// Evenly spaced distinct indices: floor(i * (total-1) / (k-1)), [0] for k=1.
std::vector<int> even_indices(int total, int k);

struct SampledFrame {
  int index = 0;
  double margin = 0.0;
};

// k = min(requested, available) evenly spaced frames with per-frame crop
// margins (uniform in the training range, fixed at eval).
std::vector<SampledFrame> sample_frames(int video_frames, int requested,
                                        const SamplingPolicy& policy,
                                        bool train_split, std::uint64_t seed);

// Mean cross-entropy over answer positions marked by the mask.
Tensor sft_loss(const Tensor& token_logits, const std::vector<int>& targets,
                const std::vector<std::uint8_t>& mask);

// ---- optimizer ------------------------------------------------------------------

// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(double weight_decay = 0.01, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);

  void step(std::vector<NamedTensor>& params, double lr);

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<const detail::TensorNode*, Slot> slots_;
};

// ---- stage configuration ----------------------------------------------------------

enum class LossKind { CE, SFT };

struct StageConfig {
  int stage = 1;  // 1, 2 or 3
  int epochs = 10;
  int batch = 32;
  double lr = 5e-5;
  int decay_start = -1;  // -1 = no decay
  double weight_decay = 0.01;
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  LossKind loss = LossKind::CE;

  static StageConfig canonical(int stage);
  void validate() const;  // trainable/frozen must partition the groups
};

// One training sample: a raw frame plus everything needed to build the crop
// and target at batch time.
struct FrameSample {
  Image frame;
  Box face_box;
  int label = 0;             // 0 real, 1 fake
  bool apply_self_blend = false;
  std::vector<int> target_tokens;        // stage 2
  std::vector<std::uint8_t> target_mask;  // stage 2
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

// Joint training core shared by the canonical stages and the one-/two-stage
// ablation strategies. Loss terms are summed.
enum class LossTerm { DetectorCE, Sft, VlfmCE };

struct TrainOptions {
  std::vector<LossTerm> losses;
  std::vector<std::string> trainable;
  int epochs = 10;
  int batch = 32;
  double lr = 5e-5;
  int decay_start = -1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int image_size = 32;
  double train_margin_lo = 0.04;
  double train_margin_hi = 0.20;
  int accumulation_steps = 1;  // kept for run-manifest fidelity
};

std::vector<EpochMetrics> run_training(ModelState& state,
                                       const ModelConfig& config,
                                       const std::vector<FrameSample>& data,
                                       const TrainOptions& options);

// Canonical stage runner: enforces ordering prerequisites and the freeze
// contract (frozen groups are bit-identical before and after).
std::vector<EpochMetrics> run_stage(const StageConfig& stage,
                                    const std::vector<FrameSample>& data,
                                    ModelState& state,
                                    const ModelConfig& config,
                                    std::uint64_t seed);

void write_metrics_csv(const std::string& path,
                       const std::vector<EpochMetrics>& metrics);

}  // namespace vlf
