#include "vlf/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "vlf/errors.hpp"
#include "vlf/rng.hpp"

namespace vlf {

double lr_schedule(int epoch, const LrSchedule& schedule) {
  const int total = schedule.total_epochs;
  const int start = schedule.decay_start < 0 ? total : schedule.decay_start;
  if (start > total) {
    throw ConfigError("decay start " + std::to_string(start) +
                      " exceeds total epochs " + std::to_string(total));
  }
  if (epoch < 0 || epoch > total) {
    throw ConfigError("epoch " + std::to_string(epoch) +
                      " outside [0, " + std::to_string(total) + "]");
  }
  if (epoch < start) return schedule.initial_lr;
  if (total == start) return 0.0;
  return schedule.initial_lr * static_cast<double>(total - epoch) /
         static_cast<double>(total - start);
}

std::vector<int> even_indices(int total, int k) {
  if (total < 1) throw DataError("even_indices on an empty sequence");
  k = std::min(k, total);
  if (k <= 1) return {0};
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) {
    out[i] = static_cast<int>(
        (static_cast<long long>(i) * (total - 1)) / (k - 1));
  }
  return out;
}

std::vector<SampledFrame> sample_frames(int video_frames, int requested,
                                        const SamplingPolicy& policy,
                                        bool train_split, std::uint64_t seed) {
  if (video_frames < 1) throw DataError("sample_frames on an empty video");
  const std::vector<int> indices = even_indices(video_frames, requested);
  Rng rng(mix_seed(seed, "frame_margins"));
  std::vector<SampledFrame> out;
  out.reserve(indices.size());
  for (const int idx : indices) {
    SampledFrame f;
    f.index = idx;
    f.margin = train_split
                   ? rng.uniform(policy.train_margin_lo, policy.train_margin_hi)
                   : policy.eval_margin;
    out.push_back(f);
  }
  return out;
}

Tensor sft_loss(const Tensor& token_logits, const std::vector<int>& targets,
                const std::vector<std::uint8_t>& mask) {
  return masked_cross_entropy(token_logits, targets, mask);
}

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(std::vector<NamedTensor>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (NamedTensor& nt : params) {
    Tensor& p = nt.tensor;
    if (!p.has_grad()) continue;
    Slot& slot = slots_[p.node()];
    if (slot.m.empty()) {
      slot.m.assign(p.size(), 0.0);
      slot.v.assign(p.size(), 0.0);
    }
    const auto g = p.grad();
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      data[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) +
                       weight_decay_ * data[i]);
    }
  }
}

// ---- stage configuration --------------------------------------------------------

StageConfig StageConfig::canonical(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.trainable = {"detector"};
      c.frozen = {"text_pathway", "vlfm"};
      c.loss = LossKind::CE;
      break;
    case 2:
      c.trainable = {"text_pathway"};
      c.frozen = {"detector", "vlfm"};
      c.loss = LossKind::SFT;
      break;
    case 3:
      c.trainable = {"vlfm"};
      c.frozen = {"detector", "text_pathway"};
      c.loss = LossKind::CE;
      break;
    default:
      throw ConfigError("stage must be 1, 2 or 3");
  }
  return c;
}

void StageConfig::validate() const {
  std::set<std::string> seen;
  for (const auto& g : trainable) seen.insert(g);
  for (const auto& g : frozen) {
    if (seen.count(g)) {
      throw ConfigError("group '" + g + "' is both trainable and frozen");
    }
    seen.insert(g);
  }
  for (const auto& g : kParameterGroups) {
    if (!seen.count(g)) {
      throw ConfigError("group '" + g + "' missing from the stage partition");
    }
  }
  if (seen.size() != kParameterGroups.size()) {
    throw ConfigError("stage partition names an unknown group");
  }
  if (epochs < 1) throw ConfigError("stage epochs must be >= 1");
  if (batch < 1) throw ConfigError("stage batch size must be >= 1");
}

// ---- training loop -----------------------------------------------------------------

namespace {

struct BatchGraph {
  Tensor loss;
  int correct = 0;
  int counted = 0;
};

// Builds the summed loss over one batch. Each loss term sees the crop of
// every sample; terms are added.
BatchGraph batch_forward(ModelState& state, const ModelConfig& config,
                         const std::vector<const FrameSample*>& batch,
                         const std::vector<Image>& crops,
                         const std::vector<LossTerm>& losses) {
  BatchGraph out;
  const bool need_detector_ce =
      std::find(losses.begin(), losses.end(), LossTerm::DetectorCE) != losses.end();
  const bool need_sft =
      std::find(losses.begin(), losses.end(), LossTerm::Sft) != losses.end();
  const bool need_vlfm_ce =
      std::find(losses.begin(), losses.end(), LossTerm::VlfmCE) != losses.end();
  const bool need_text = need_sft || need_vlfm_ce;

  std::vector<Tensor> detector_logits;
  std::vector<Tensor> vlfm_logits;
  std::vector<int> labels;
  std::vector<Tensor> sft_losses;

  const std::vector<int> question =
      need_text ? state.vocab.encode(config.question) : std::vector<int>{};

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FrameSample& sample = *batch[i];
    const Tensor image = image_to_tensor(crops[i]);
    labels.push_back(sample.label);

    const DetectorOut det =
        detect_features(image, state.detector, config.detector);
    if (need_detector_ce) detector_logits.push_back(det.logits);

    if (need_text) {
      const Tensor e_v = encode_image_tokens(image, state.encoder, config.encoder);
      TextPathwayConfig tc = config.text;
      tc.vocab = state.vocab.size();
      const TextPathwayOut text = text_pathway_forward(
          e_v, flatten_spatial(det.penultimate), state.text, tc, question);
      if (need_sft && !sample.target_tokens.empty()) {
        sft_losses.push_back(
            sft_loss(text.token_logits, sample.target_tokens, sample.target_mask));
        // Accuracy for SFT: first answer slot predicts the first target token.
        int best = 0;
        for (int j = 1; j < text.token_logits.cols(); ++j) {
          if (text.token_logits.at(0, j) > text.token_logits.at(0, best)) best = j;
        }
        out.correct += best == sample.target_tokens[0] ? 1 : 0;
        ++out.counted;
      }
      if (need_vlfm_ce) {
        const Tensor e_c = flatten_spatial(det.final_map);
        const VlfmOut v = vlfm_forward(e_c, text.e_l, state.vlfm, config.vlfm);
        vlfm_logits.push_back(v.logits);
      }
    }
  }

  std::vector<Tensor> terms;
  if (need_detector_ce) {
    const Tensor logits = concat_rows(detector_logits);
    terms.push_back(cross_entropy(logits, labels));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int pred =
          detector_logits[i].at(0, 1) > detector_logits[i].at(0, 0) ? 1 : 0;
      out.correct += pred == labels[i] ? 1 : 0;
      ++out.counted;
    }
  }
  if (need_vlfm_ce) {
    const Tensor logits = concat_rows(vlfm_logits);
    terms.push_back(cross_entropy(logits, labels));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int pred = vlfm_logits[i].at(0, 1) > vlfm_logits[i].at(0, 0) ? 1 : 0;
      out.correct += pred == labels[i] ? 1 : 0;
      ++out.counted;
    }
  }
  if (!sft_losses.empty()) {
    Tensor total = sft_losses[0];
    for (std::size_t i = 1; i < sft_losses.size(); ++i) {
      total = add(total, sft_losses[i]);
    }
    terms.push_back(scale(total, 1.0 / static_cast<double>(sft_losses.size())));
  }
  if (terms.empty()) throw ContractError("batch produced no loss terms");
  Tensor loss = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
  out.loss = loss;
  return out;
}

}  // namespace

std::vector<EpochMetrics> run_training(ModelState& state,
                                       const ModelConfig& config,
                                       const std::vector<FrameSample>& data,
                                       const TrainOptions& options) {
  if (data.empty()) throw DataError("run_training received no samples");

  for (const auto& group : kParameterGroups) {
    const bool trainable = std::find(options.trainable.begin(),
                                     options.trainable.end(),
                                     group) != options.trainable.end();
    const bool initialized = (group == "detector" && state.has_detector) ||
                             (group == "text_pathway" && state.has_text) ||
                             (group == "vlfm" && state.has_vlfm);
    if (initialized) set_group_requires_grad(state, group, trainable);
  }

  std::vector<NamedTensor> params;
  for (const auto& group : options.trainable) {
    for (NamedTensor& nt : group_tensors(state, group)) params.push_back(nt);
  }
  AdamW optimizer(options.weight_decay);

  LrSchedule schedule;
  schedule.total_epochs = options.epochs;
  schedule.initial_lr = options.lr;
  schedule.decay_start = options.decay_start;

  std::vector<EpochMetrics> metrics;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, schedule);
    Rng rng(mix_seed(options.seed, 9000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    int correct = 0;
    int counted = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(options.batch)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(options.batch));
      std::vector<const FrameSample*> batch;
      std::vector<Image> crops;
      for (std::size_t i = begin; i < end; ++i) {
        const FrameSample& sample = data[order[i]];
        batch.push_back(&sample);
        Image frame = sample.frame;
        if (sample.apply_self_blend) {
          frame = self_blend(frame, sample.face_box,
                             mix_seed(options.seed,
                                      7'000'000 + epoch * 100'003 + order[i]));
        }
        const double margin =
            rng.uniform(options.train_margin_lo, options.train_margin_hi);
        const WindowD window = expand_box(sample.face_box, margin,
                                          frame.width, frame.height);
        crops.push_back(crop_resize(frame, window, options.image_size));
      }

      for (NamedTensor& nt : params) nt.tensor.zero_grad();
      BatchGraph graph =
          batch_forward(state, config, batch, crops, options.losses);
      const double loss_value = graph.loss.value();
      if (!std::isfinite(loss_value)) {
        throw PipelineError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));
      }
      backward(graph.loss);
      optimizer.step(params, lr);
      epoch_loss += loss_value;
      ++batches;
      correct += graph.correct;
      counted += graph.counted;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.loss = epoch_loss / batches;
    em.accuracy = counted > 0 ? static_cast<double>(correct) / counted : 0.0;
    em.lr = lr;
    metrics.push_back(em);
  }
  return metrics;
}

std::vector<EpochMetrics> run_stage(const StageConfig& stage,
                                    const std::vector<FrameSample>& data,
                                    ModelState& state,
                                    const ModelConfig& config,
                                    std::uint64_t seed) {
  stage.validate();
  // Ordering prerequisites: each stage needs its frozen inputs in place.
  if (stage.stage == 2 && !state.has_detector) {
    throw PipelineError("stage 2 requires a stage-1 detector checkpoint");
  }
  if (stage.stage == 3 && (!state.has_detector || !state.has_text)) {
    throw PipelineError("stage 3 requires stage-1 and stage-2 checkpoints");
  }

  TrainOptions options;
  options.trainable = stage.trainable;
  options.epochs = stage.epochs;
  options.batch = stage.batch;
  options.lr = stage.lr;
  options.decay_start = stage.decay_start;
  options.weight_decay = stage.weight_decay;
  options.seed = mix_seed(seed, 100 + static_cast<std::uint64_t>(stage.stage));
  options.image_size = config.detector.image_size;
  switch (stage.stage) {
    case 1: options.losses = {LossTerm::DetectorCE}; break;
    case 2: options.losses = {LossTerm::Sft}; break;
    default: options.losses = {LossTerm::VlfmCE}; break;
  }
  return run_training(state, config, data, options);
}

void write_metrics_csv(const std::string& path,
                       const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "epoch,loss,train_accuracy,lr\n";
  char buf[128];
  for (const EpochMetrics& em : metrics) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", em.epoch, em.loss,
                  em.accuracy, em.lr);
    out << buf;
  }
}

}  // namespace vlf
