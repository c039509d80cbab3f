#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vlf/image.hpp"

namespace vlf {

inline const std::vector<std::string> kManipulationMethods = {"M1", "M2",
                                                              "M3", "M4"};

// One procedural face video. Fake videos carry the method tag and reference
// the source identity; manipulated pixels stay inside the per-frame face box.
struct ToyVideo {
  int identity = 0;
  std::string label = "real";   // "real" | "fake"
  std::string method = "none";  // "none" | "M1".."M4"
  std::vector<Image> frames;
  std::vector<Box> face_boxes;      // one per frame
  std::vector<Box> artifact_boxes;  // one per frame, fakes only

  int frame_count() const { return static_cast<int>(frames.size()); }
  std::string video_id() const;
};

struct CorpusParams {
  int identities = 20;
  int image_size = 32;
  int min_frames = 24;
  int max_frames = 32;
  // Scales manipulation intensity; the held-out "cross" family uses 0.7.
  double artifact_strength = 1.0;
};

ToyVideo gen_identity(std::uint64_t seed, int id, int frames,
                      int image_size = 32);

ToyVideo plant_artifact(const ToyVideo& real, const std::string& method,
                        std::uint64_t seed, double strength = 1.0);

// Source-target self blend: a transformed copy of the image blended back onto
// itself through a smoothed elliptical mask inside the face box.
Image self_blend(const Image& image, const Box& face_box, std::uint64_t seed);

// Test hook: same blend with an externally forced constant mask value.
Image self_blend_forced_mask(const Image& image, const Box& face_box,
                             std::uint64_t seed, double mask_value);

// ---- on-disk corpus --------------------------------------------------------

struct VideoRecord {
  std::string id;
  int identity = 0;
  std::string label;
  std::string method;
  std::string path;  // directory holding frame PPMs
  int frames = 0;
  std::vector<Box> face_boxes;
  std::vector<Box> artifact_boxes;
};

struct Corpus {
  CorpusParams params;
  std::uint64_t seed = 0;
  std::vector<VideoRecord> videos;
};

// Generates all videos for `params` under `seed` and writes frames (binary
// PPM) plus a JSON-lines index to `dir`. Returns the index path.
std::string write_corpus(const std::string& dir, const CorpusParams& params,
                         std::uint64_t seed);

Corpus load_corpus_index(const std::string& index_path);

Image load_frame(const VideoRecord& video, int frame_idx);

// Content hash over the index and every frame file, in index order.
std::string corpus_content_hash(const std::string& index_path);

// Generates the full corpus in memory (tests and trainers cache frames).
std::vector<ToyVideo> generate_corpus(const CorpusParams& params,
                                      std::uint64_t seed);

}  // namespace vlf
