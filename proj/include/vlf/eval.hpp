#pragma once

#include <map>
#include <string>
#include <vector>

#include "vlf/dataset.hpp"
#include "vlf/net.hpp"
#include "vlf/training.hpp"

namespace vlf {

// Highest face score wins when a frame carries several faces.
double frame_score_multiface(const std::vector<double>& face_scores);

// Video score = mean of per-frame fakeness scores.
double video_score(const std::vector<double>& frame_scores);

// ROC AUC via average ranks; ties earn half credit (Mann-Whitney). Matches
// the pairwise brute-force count exactly.
double auc(const std::vector<int>& labels, const std::vector<double>& scores);

struct VideoScore {
  std::string id;
  std::string label;
  std::string method;
  double score = 0.0;
};

struct EvalResult {
  double auc_all = 0.0;
  std::map<std::string, double> auc_per_method;  // each method's fakes vs reals
  std::vector<VideoScore> videos;
};

// Scores every video (evenly sampled frames, fixed eval crop margin) and
// computes video-level AUC.
EvalResult evaluate_videos(const std::vector<ToyVideo>& videos,
                           const ModelState& state, const ModelConfig& config,
                           const SamplingPolicy& policy);

}  // namespace vlf
