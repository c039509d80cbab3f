#include "vlf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vlf/errors.hpp"

namespace vlf {

double frame_score_multiface(const std::vector<double>& face_scores) {
  if (face_scores.empty()) {
    throw DataError("frame_score_multiface on an empty face list");
  }
  return *std::max_element(face_scores.begin(), face_scores.end());
}

double video_score(const std::vector<double>& frame_scores) {
  if (frame_scores.empty()) {
    throw DataError("video_score on an empty frame list");
  }
  double sum = 0.0;
  for (const double s : frame_scores) sum += s;
  return sum / static_cast<double>(frame_scores.size());
}

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size()) {
    throw ContractError("auc: labels and scores differ in length");
  }
  const std::size_t n = labels.size();
  std::size_t positives = 0;
  for (const int l : labels) positives += l != 0 ? 1 : 0;
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw MetricError("auc undefined: both classes must be present");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Average ranks across tie groups, accumulate positive ranks.
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) +
                                   static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) positive_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) /
         (p * static_cast<double>(negatives));
}

EvalResult evaluate_videos(const std::vector<ToyVideo>& videos,
                           const ModelState& state, const ModelConfig& config,
                           const SamplingPolicy& policy) {
  EvalResult result;
  for (const ToyVideo& video : videos) {
    // Testing samples the same frame budget per video regardless of label.
    const std::vector<SampledFrame> samples =
        sample_frames(video.frame_count(), policy.real_frames, policy,
                      /*train_split=*/false, 0);
    std::vector<double> frame_scores;
    frame_scores.reserve(samples.size());
    for (const SampledFrame& sf : samples) {
      const Image& frame = video.frames[sf.index];
      const WindowD window = expand_box(video.face_boxes[sf.index], sf.margin,
                                        frame.width, frame.height);
      const Image crop =
          crop_resize(frame, window, config.detector.image_size);
      // Single face per synthetic frame; the multi-face rule still applies.
      frame_scores.push_back(
          frame_score_multiface({score_frame(crop, state, config)}));
    }
    VideoScore vs;
    vs.id = video.video_id();
    vs.label = video.label;
    vs.method = video.method;
    vs.score = video_score(frame_scores);
    result.videos.push_back(std::move(vs));
  }

  std::vector<int> labels;
  std::vector<double> scores;
  for (const VideoScore& vs : result.videos) {
    labels.push_back(vs.label == "fake" ? 1 : 0);
    scores.push_back(vs.score);
  }
  result.auc_all = auc(labels, scores);

  for (const std::string& method : kManipulationMethods) {
    std::vector<int> sub_labels;
    std::vector<double> sub_scores;
    for (const VideoScore& vs : result.videos) {
      if (vs.label == "real" || vs.method == method) {
        sub_labels.push_back(vs.label == "fake" ? 1 : 0);
        sub_scores.push_back(vs.score);
      }
    }
    bool has_pos = false, has_neg = false;
    for (const int l : sub_labels) (l ? has_pos : has_neg) = true;
    if (has_pos && has_neg) {
      result.auc_per_method[method] = auc(sub_labels, sub_scores);
    }
  }
  return result;
}

}  // namespace vlf
