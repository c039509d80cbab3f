#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vlf/dataset.hpp"

namespace vlf {

inline const std::string kFixedQuestion = "Is this image manipulated?";

// Reference to one stored frame; clients pick the field they need.
struct ImageRef {
  std::string video_id;
  int frame_idx = 0;
  std::string path;
};

// One (real, fake) frame pair for contrastive prompting.
struct FramePair {
  int identity = 0;
  std::string method;  // M1..M4
  int frame_idx = 0;
  ImageRef real;
  ImageRef fake;
};

struct AnnotationRecord {
  std::string video_id;
  int frame_idx = 0;
  std::string label;   // "real" | "fake"
  std::string method;  // "none" | "M1".."M4"
  std::string question = kFixedQuestion;
  std::string answer;
  std::string generator;  // client id
  std::string prompt_sha256;
};

struct MtsSummary {
  std::string method;
  std::string official_description;
  std::string summary;  // single sentence
};

// ---- LLM client interface ------------------------------------------------------

struct LlmRequest {
  std::string prompt;
  std::vector<ImageRef> images;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
  virtual std::string id() const = 0;
};

// Deterministic template client driven by corpus metadata; answers describe
// the planted artifact region for fakes.
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(const Corpus& corpus);
  std::string complete(const LlmRequest& request) override;
  std::string id() const override { return "mock"; }

 private:
  std::map<std::string, const VideoRecord*> by_id_;
  Corpus corpus_;
};

// ---- pairing and prompts --------------------------------------------------------

// Shared evenly spaced indices over the minimum frame count of the five
// videos of one identity. K above the minimum is clamped with a warning.
std::vector<FramePair> pair_frames(const VideoRecord& real,
                                   const std::vector<VideoRecord>& fakes,
                                   int pairs_per_method);

// Both flags on is the full pipeline; either off produces the annotation-set
// ablation variants. Prompt wording is project-authored (see data/prompts/).
struct PromptOptions {
  bool use_cfad = true;
  bool use_mts = true;
};

std::string build_cfad_prompt(const FramePair& pair, const MtsSummary& summary,
                              const PromptOptions& options = {});

// The exact real-frame prompt.
std::string build_real_prompt();

// ---- MTS ------------------------------------------------------------------------

// Built-in editable descriptions of the four toy manipulations, used when no
// data files are supplied.
std::map<std::string, std::string> default_method_descriptions();
std::map<std::string, std::string> load_method_descriptions(
    const std::string& dir);

std::vector<std::string> validate_summary_text(const std::string& summary);

MtsSummary summarize_technique(const std::string& method,
                               const std::string& official_description,
                               LlmClient& client, int max_retries = 3);

// ---- record validation -------------------------------------------------------------

// Empty result means the record is valid.
std::vector<std::string> validate_annotation(const AnnotationRecord& record);

// ---- pipeline ------------------------------------------------------------------------

struct AnnotationConfig {
  int pairs_per_method = 4;  // K
  bool use_cfad = true;
  bool use_mts = true;
  int max_retries = 3;
  int parallelism = 1;
  std::map<std::string, std::string> method_descriptions =
      default_method_descriptions();
};

struct AnnotationRunStats {
  int written = 0;
  int skipped = 0;      // resume hits
  int quarantined = 0;
};

// Annotates every paired frame of the corpus, appending JSON lines to
// out_path; invalid responses go to quarantine_path and the run continues.
// Reruns are idempotent via (video_id, frame_idx) resume keys.
AnnotationRunStats annotate_corpus(const Corpus& corpus, LlmClient& client,
                                   const AnnotationConfig& config,
                                   const std::string& out_path,
                                   const std::string& quarantine_path);

std::vector<AnnotationRecord> load_annotations(const std::string& path);
void append_annotation(std::ostream& out, const AnnotationRecord& record);

// ---- live client -----------------------------------------------------------------------

// Token bucket with externally supplied time, so rate logic is testable.
class TokenBucket {
 public:
  TokenBucket(double capacity, double refill_per_minute);
  bool try_acquire(double now_seconds);
  double seconds_until_available(double now_seconds) const;

 private:
  double capacity_, refill_per_second_;
  double tokens_;
  double last_ = 0.0;
  void refill(double now_seconds);
};

struct HttpClientConfig {
  std::string endpoint;       // http://host:port/path
  std::string auth_env_var;   // name of the env var holding the token
  std::string model;
  double requests_per_minute = 30.0;
  int max_retries = 3;
  double initial_backoff_seconds = 0.5;
};

// Generic JSON-over-HTTP client: POST {model, prompt, images(base64)} and
// expect {"text": "..."}. Exponential backoff on failure.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(HttpClientConfig config);
  std::string complete(const LlmRequest& request) override;
  std::string id() const override { return "http"; }

 private:
  HttpClientConfig config_;
  TokenBucket bucket_;
};

std::string base64_encode(const std::string& bytes);

}  // namespace vlf
