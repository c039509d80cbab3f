#include "vlf/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <atomic>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "vlf/errors.hpp"
#include "vlf/encoders.hpp"
#include "vlf/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vlf {

namespace {

std::string frame_path(const VideoRecord& video, int frame_idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", frame_idx);
  return (fs::path(video.path) / buf).string();
}

ImageRef make_ref(const VideoRecord& video, int frame_idx) {
  return ImageRef{video.id, frame_idx, frame_path(video, frame_idx)};
}

}  // namespace

// ---- mock client ---------------------------------------------------------------

MockLlmClient::MockLlmClient(const Corpus& corpus) : corpus_(corpus) {
  for (const VideoRecord& v : corpus_.videos) {
    by_id_[v.id] = &v;
  }
}

namespace {

std::string region_phrase(const Box& artifact, const Box& face) {
  const double cx = 0.5 * (artifact.x0 + artifact.x1);
  const double cy = 0.5 * (artifact.y0 + artifact.y1);
  const double fx = face.width() > 0 ? (cx - face.x0) / face.width() : 0.5;
  const double fy = face.height() > 0 ? (cy - face.y0) / face.height() : 0.5;
  std::string vertical = fy < 0.34 ? "upper" : (fy < 0.62 ? "central" : "lower");
  std::string horizontal = fx < 0.34 ? "left" : (fx < 0.62 ? "middle" : "right");
  if (vertical == "central" && horizontal == "middle") return "center of the face";
  return vertical + " " + horizontal + " part of the face";
}

const std::map<std::string, std::string>& mock_artifact_phrases() {
  static const std::map<std::string, std::string> phrases = {
      {"M1", "skin texture borrowed from another face with a mismatched grain"},
      {"M2", "bent highlights where rows of pixels were warped"},
      {"M3", "a pasted rectangular block with a hard seam"},
      {"M4", "an over-smoothed recolored patch that lost its natural texture"}};
  return phrases;
}

const std::map<std::string, std::string>& mock_technique_paraphrases() {
  static const std::map<std::string, std::string> phrases = {
      {"M1", "In short, the forgery grafts skin from a different identity."},
      {"M2", "In short, the forgery bends the mouth area out of shape."},
      {"M3", "In short, the forgery pastes a foreign rectangle onto the face."},
      {"M4", "In short, the forgery smooths and repaints part of the face."}};
  return phrases;
}

const std::map<std::string, std::string>& mock_summaries() {
  static const std::map<std::string, std::string> summaries = {
      {"M1",
       "This method copies a patch of skin from a different person's face onto "
       "the target face, leaving subtle texture mismatches."},
      {"M2",
       "This method bends small rows of pixels around the mouth so the "
       "expression looks slightly distorted."},
      {"M3",
       "This method pastes a rectangular block taken from another face over "
       "the center of the target face, leaving a visible seam."},
      {"M4",
       "This method smooths and recolors a small area of the face until the "
       "skin loses its natural texture."}};
  return summaries;
}

}  // namespace

std::string MockLlmClient::complete(const LlmRequest& request) {
  if (request.images.empty()) {
    // MTS summarization request; the method tag rides in the prompt.
    for (const auto& [method, summary] : mock_summaries()) {
      if (request.prompt.find("[method " + method + "]") != std::string::npos) {
        return summary;
      }
    }
    throw DataError("mock client cannot identify the technique to summarize");
  }
  if (request.images.size() == 1) {
    return "No, this image is real. The face shows consistent skin texture, "
           "coherent lighting and natural color transitions without seams or "
           "warped regions.";
  }
  // Paired request: the fake image is attached second.
  const ImageRef& fake_ref = request.images.back();
  const auto it = by_id_.find(fake_ref.video_id);
  if (it == by_id_.end()) {
    throw DataError("mock client has no metadata for video " +
                    fake_ref.video_id);
  }
  const VideoRecord& video = *it->second;
  if (video.artifact_boxes.empty()) {
    throw DataError("mock client asked to describe a video without artifacts");
  }
  const int idx =
      std::min(fake_ref.frame_idx,
               static_cast<int>(video.artifact_boxes.size()) - 1);
  const std::string where =
      region_phrase(video.artifact_boxes[idx], video.face_boxes[idx]);
  std::string answer = "Yes, this image is manipulated. The " + where +
                       " shows " + mock_artifact_phrases().at(video.method) + ".";
  if (request.prompt.find("Compare the two images") != std::string::npos) {
    answer += " Compared with the original, the affected area clearly differs "
              "from its surroundings.";
  }
  if (request.prompt.find("Technique summary:") != std::string::npos) {
    answer += " " + mock_technique_paraphrases().at(video.method);
  }
  return answer;
}

// ---- pairing ----------------------------------------------------------------------

std::vector<FramePair> pair_frames(const VideoRecord& real,
                                   const std::vector<VideoRecord>& fakes,
                                   int pairs_per_method) {
  if (real.label != "real") {
    throw DataError("pair_frames: first argument must be the real video");
  }
  if (fakes.size() != 4) {
    throw DataError("pair_frames expects exactly 4 fake videos, got " +
                    std::to_string(fakes.size()));
  }
  int t_min = real.frames;
  for (const VideoRecord& f : fakes) {
    if (f.identity != real.identity) {
      throw DataError("pair_frames: identity mismatch between " + real.id +
                      " and " + f.id);
    }
    if (f.label != "fake") {
      throw DataError("pair_frames: " + f.id + " is not a fake video");
    }
    t_min = std::min(t_min, f.frames);
  }
  if (t_min < 1) throw DataError("pair_frames: empty video");
  int k = pairs_per_method;
  if (k > t_min) {
    std::cerr << "[annotate] warning: K=" << k << " exceeds minimum frame count "
              << t_min << " for identity " << real.identity
              << "; clamping to " << t_min << "\n";
    k = t_min;
  }
  std::vector<int> indices;
  if (k <= 1) {
    indices = {0};
  } else {
    for (int i = 0; i < k; ++i) {
      indices.push_back(static_cast<int>(
          (static_cast<long long>(i) * (t_min - 1)) / (k - 1)));
    }
  }
  std::vector<FramePair> pairs;
  for (const VideoRecord& f : fakes) {
    for (const int idx : indices) {
      FramePair p;
      p.identity = real.identity;
      p.method = f.method;
      p.frame_idx = idx;
      p.real = make_ref(real, idx);
      p.fake = make_ref(f, idx);
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

// ---- prompts ---------------------------------------------------------------------

std::string build_cfad_prompt(const FramePair& pair, const MtsSummary& summary,
                              const PromptOptions& options) {
  if (options.use_mts && summary.method != pair.method) {
    throw ContractError("summary method " + summary.method +
                        " does not match pair method " + pair.method);
  }
  std::string prompt = "You are a face forgery detection expert.";
  if (options.use_cfad) {
    prompt +=
        " You will receive two face images of the same person: the first is "
        "the original real face and the second is a manipulated version of it. "
        "Compare the two images and explain the forgery clues visible in the "
        "manipulated image, localizing the affected region.";
  } else {
    prompt +=
        " You will receive a manipulated face image. Explain the forgery "
        "clues visible in the image.";
  }
  if (options.use_mts) {
    prompt += " Technique summary: " + summary.summary;
    prompt +=
        " Subtly rephrase the technique summary in your explanation instead "
        "of quoting it.";
  }
  prompt +=
      " Begin your answer with 'Yes' followed by a concise explanation of the "
      "artifacts.";
  prompt += "\nAttachments:";
  if (options.use_cfad) {
    prompt += " real=" + pair.real.video_id + "#" +
              std::to_string(pair.real.frame_idx);
  }
  prompt += " fake=" + pair.fake.video_id + "#" +
            std::to_string(pair.fake.frame_idx);
  return prompt;
}

std::string build_real_prompt() {
  return "As a face forgery detection expert, you will receive a real image. "
         "Please provide a concise explanation of why it is real in no more "
         "than 40 words. Begin with 'This/The image/face'.";
}

// ---- MTS -------------------------------------------------------------------------

std::map<std::string, std::string> default_method_descriptions() {
  return {
      {"M1",
       "Donor-region swap: a rectangular patch of facial texture is sampled "
       "from a donor identity's rendered face at the same relative facial "
       "position and written over the target face, so local skin statistics "
       "come from the wrong person."},
      {"M2",
       "Local geometric warp: rows of pixels inside the mouth region are "
       "displaced horizontally by a smooth sinusoidal offset, bending "
       "features while leaving global color statistics untouched."},
      {"M3",
       "Rectangular face replacement: a large central rectangle of the face "
       "is replaced by a contrast-boosted block rendered from a donor "
       "identity, framed by a darkened seam."},
      {"M4",
       "Texture blur and recolor: a sub-region of the face is repeatedly "
       "box-blurred and one color channel is shifted, erasing natural "
       "texture."}};
}

std::map<std::string, std::string> load_method_descriptions(
    const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const std::string& method : kManipulationMethods) {
    const fs::path p = fs::path(dir) / (method + ".txt");
    std::ifstream in(p);
    if (!in) throw DataError("missing technique description file " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
      text.pop_back();
    }
    out[method] = std::move(text);
  }
  return out;
}

std::vector<std::string> validate_summary_text(const std::string& summary) {
  std::vector<std::string> violations;
  if (summary.empty()) {
    violations.push_back("empty summary");
    return violations;
  }
  const auto periods = std::count(summary.begin(), summary.end(), '.');
  if (periods != 1 || summary.back() != '.') {
    violations.push_back("summary must be a single sentence with one terminal period");
  }
  const auto digits = std::count_if(summary.begin(), summary.end(),
                                    [](char c) { return c >= '0' && c <= '9'; });
  if (digits > 3) {
    violations.push_back("summary contains digit-heavy technical notation");
  }
  return violations;
}

MtsSummary summarize_technique(const std::string& method,
                               const std::string& official_description,
                               LlmClient& client, int max_retries) {
  if (official_description.empty()) {
    throw DataError("summarize_technique: empty official description");
  }
  LlmRequest request;
  request.prompt =
      "Summarize the following manipulation technique description in exactly "
      "one clear, non-technical sentence for a broad audience. [method " +
      method + "] Description: " + official_description;
  std::string transcript;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const std::string response = client.complete(request);
    if (validate_summary_text(response).empty()) {
      return MtsSummary{method, official_description, response};
    }
    transcript += "attempt " + std::to_string(attempt) + ": " + response + "\n";
  }
  throw UpstreamError("technique summarization failed validation after " +
                      std::to_string(max_retries) + " retries; transcript:\n" +
                      transcript);
}

// ---- validation ---------------------------------------------------------------------

std::vector<std::string> validate_annotation(const AnnotationRecord& record) {
  std::vector<std::string> violations;
  if (record.label != "real" && record.label != "fake") {
    violations.push_back("unknown label '" + record.label + "'");
  }
  if (record.question != kFixedQuestion) {
    violations.push_back("question is not byte-exact");
  }
  if (record.answer.empty()) {
    violations.push_back("empty answer");
    return violations;
  }
  if (record.label == "fake" && !record.answer.starts_with("Yes")) {
    violations.push_back("prefix/label mismatch: fake answer must start 'Yes'");
  }
  if (record.label == "real" && !record.answer.starts_with("No")) {
    violations.push_back("prefix/label mismatch: real answer must start 'No'");
  }
  if (record.label == "fake" &&
      std::find(kManipulationMethods.begin(), kManipulationMethods.end(),
                record.method) == kManipulationMethods.end()) {
    violations.push_back("fake record method must be one of M1..M4");
  }
  if (record.label == "real" && record.method != "none") {
    violations.push_back("real record method must be 'none'");
  }
  if (record.label == "real") {
    const auto words = Vocabulary::split_words(record.answer);
    if (words.size() > 41) {  // prefix token + 40-word body
      violations.push_back("word limit: real answer body exceeds 40 words");
    }
  }
  return violations;
}

// ---- pipeline -------------------------------------------------------------------------

void append_annotation(std::ostream& out, const AnnotationRecord& record) {
  json j;
  j["video_id"] = record.video_id;
  j["frame_idx"] = record.frame_idx;
  j["label"] = record.label;
  j["method"] = record.method;
  j["question"] = record.question;
  j["answer"] = record.answer;
  j["generator"] = record.generator;
  j["prompt_sha256"] = record.prompt_sha256;
  out << j.dump() << "\n";
}

std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  std::vector<AnnotationRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    AnnotationRecord r;
    r.video_id = j.at("video_id").get<std::string>();
    r.frame_idx = j.at("frame_idx").get<int>();
    r.label = j.at("label").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    r.generator = j.at("generator").get<std::string>();
    r.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

struct WorkItem {
  bool is_real = false;
  std::string video_id;
  int frame_idx = 0;
  std::string method = "none";
  std::string prompt;
  std::vector<ImageRef> images;
};

struct ItemResult {
  AnnotationRecord record;
  std::vector<std::string> violations;
};

ItemResult process_item(const WorkItem& item, LlmClient& client,
                        int max_retries) {
  ItemResult result;
  AnnotationRecord& r = result.record;
  r.video_id = item.video_id;
  r.frame_idx = item.frame_idx;
  r.label = item.is_real ? "real" : "fake";
  r.method = item.method;
  r.generator = client.id();
  r.prompt_sha256 = sha256_hex(item.prompt);

  LlmRequest request{item.prompt, item.images};
  std::string transcript;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::string answer = client.complete(request);
    // The dataset convention fixes the prefix; enforce it on the response.
    const char* prefix = item.is_real ? "No" : "Yes";
    if (!answer.starts_with(prefix)) {
      answer = std::string(prefix) + ", " + answer;
    }
    r.answer = std::move(answer);
    result.violations = validate_annotation(r);
    if (result.violations.empty()) return result;
    transcript += r.answer;
  }
  return result;  // violations non-empty -> caller quarantines
}

}  // namespace

AnnotationRunStats annotate_corpus(const Corpus& corpus, LlmClient& client,
                                   const AnnotationConfig& config,
                                   const std::string& out_path,
                                   const std::string& quarantine_path) {
  // Resume keys from any previous run.
  std::set<std::pair<std::string, int>> done;
  for (const AnnotationRecord& r : load_annotations(out_path)) {
    done.insert({r.video_id, r.frame_idx});
  }

  // Technique summaries (skipped entirely for the w/o-MTS variant).
  std::map<std::string, MtsSummary> summaries;
  if (config.use_mts) {
    for (const std::string& method : kManipulationMethods) {
      const auto it = config.method_descriptions.find(method);
      if (it == config.method_descriptions.end()) {
        throw DataError("missing official description for " + method);
      }
      summaries[method] =
          summarize_technique(method, it->second, client, config.max_retries);
    }
  }

  // Group videos by identity.
  std::map<int, const VideoRecord*> reals;
  std::map<int, std::vector<VideoRecord>> fakes;
  for (const VideoRecord& v : corpus.videos) {
    if (v.label == "real") {
      reals[v.identity] = &v;
    } else {
      fakes[v.identity].push_back(v);
    }
  }

  PromptOptions prompt_options{config.use_cfad, config.use_mts};
  std::vector<WorkItem> items;
  AnnotationRunStats stats;
  for (const auto& [identity, real] : reals) {
    auto fit = fakes.find(identity);
    if (fit == fakes.end() || fit->second.size() != 4) {
      throw DataError("identity " + std::to_string(identity) +
                      " does not have exactly 4 fake videos");
    }
    std::sort(fit->second.begin(), fit->second.end(),
              [](const VideoRecord& a, const VideoRecord& b) {
                return a.method < b.method;
              });
    const std::vector<FramePair> pairs =
        pair_frames(*real, fit->second, config.pairs_per_method);
    // pairs are grouped by method; regroup per frame index so the output
    // order is (real, M1..M4) per index.
    std::set<int> indices;
    for (const FramePair& p : pairs) indices.insert(p.frame_idx);
    for (const int idx : indices) {
      if (done.count({real->id, idx})) {
        ++stats.skipped;
      } else {
        WorkItem item;
        item.is_real = true;
        item.video_id = real->id;
        item.frame_idx = idx;
        item.prompt = build_real_prompt();
        item.images = {make_ref(*real, idx)};
        items.push_back(std::move(item));
      }
      for (const VideoRecord& f : fit->second) {
        if (done.count({f.id, idx})) {
          ++stats.skipped;
          continue;
        }
        const auto pit = std::find_if(
            pairs.begin(), pairs.end(), [&](const FramePair& p) {
              return p.method == f.method && p.frame_idx == idx;
            });
        if (pit == pairs.end()) continue;
        WorkItem item;
        item.is_real = false;
        item.video_id = f.id;
        item.frame_idx = idx;
        item.method = f.method;
        const MtsSummary summary =
            config.use_mts ? summaries.at(f.method) : MtsSummary{};
        item.prompt = build_cfad_prompt(*pit, summary, prompt_options);
        if (config.use_cfad) {
          item.images = {pit->real, pit->fake};
        } else {
          item.images = {pit->fake};
        }
        items.push_back(std::move(item));
      }
    }
  }

  // Independent requests may run concurrently; the writer stays serialized
  // and output order stays deterministic.
  std::vector<ItemResult> results(items.size());
  const int jobs = std::max(1, config.parallelism);
  if (jobs == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      results[i] = process_item(items[i], client, config.max_retries);
    }
  } else {
    std::vector<std::future<void>> futures;
    std::atomic<std::size_t> next{0};
    for (int j = 0; j < jobs; ++j) {
      futures.push_back(std::async(std::launch::async, [&] {
        for (std::size_t i = next.fetch_add(1); i < items.size();
             i = next.fetch_add(1)) {
          results[i] = process_item(items[i], client, config.max_retries);
        }
      }));
    }
    for (auto& f : futures) f.get();
  }

  std::ofstream out(out_path, std::ios::app);
  if (!out) throw DataError("cannot open " + out_path + " for appending");
  std::ofstream quarantine;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].violations.empty()) {
      append_annotation(out, results[i].record);
      ++stats.written;
    } else {
      if (!quarantine.is_open()) {
        quarantine.open(quarantine_path, std::ios::app);
      }
      json q;
      q["video_id"] = results[i].record.video_id;
      q["frame_idx"] = results[i].record.frame_idx;
      q["answer"] = results[i].record.answer;
      q["violations"] = results[i].violations;
      quarantine << q.dump() << "\n";
      ++stats.quarantined;
    }
  }
  return stats;
}

// ---- live client ------------------------------------------------------------------------

TokenBucket::TokenBucket(double capacity, double refill_per_minute)
    : capacity_(capacity), refill_per_second_(refill_per_minute / 60.0),
      tokens_(capacity) {}

void TokenBucket::refill(double now_seconds) {
  if (now_seconds > last_) {
    tokens_ = std::min(capacity_, tokens_ + (now_seconds - last_) * refill_per_second_);
    last_ = now_seconds;
  }
}

bool TokenBucket::try_acquire(double now_seconds) {
  refill(now_seconds);
  if (tokens_ >= 1.0) {
    tokens_ -= 1.0;
    return true;
  }
  return false;
}

double TokenBucket::seconds_until_available(double now_seconds) const {
  TokenBucket copy = *this;
  copy.refill(now_seconds);
  if (copy.tokens_ >= 1.0) return 0.0;
  return (1.0 - copy.tokens_) / refill_per_second_;
}

std::string base64_encode(const std::string& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

HttpLlmClient::HttpLlmClient(HttpClientConfig config)
    : config_(std::move(config)),
      bucket_(std::max(1.0, config_.requests_per_minute / 6.0),
              config_.requests_per_minute) {}

std::string HttpLlmClient::complete(const LlmRequest& request) {
  // Split endpoint into host[:port] and path.
  std::string url = config_.endpoint;
  const std::string scheme = "http://";
  if (!url.starts_with(scheme)) {
    throw ConfigError("http client endpoint must start with http://");
  }
  url = url.substr(scheme.size());
  const auto slash = url.find('/');
  const std::string hostport = slash == std::string::npos ? url : url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : url.substr(slash);

  json body;
  body["model"] = config_.model;
  body["prompt"] = request.prompt;
  json images = json::array();
  for (const ImageRef& ref : request.images) {
    std::ifstream in(ref.path, std::ios::binary);
    if (!in) throw DataError("cannot read image " + ref.path);
    std::stringstream buf;
    buf << in.rdbuf();
    images.push_back(base64_encode(buf.str()));
  }
  body["images"] = images;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.auth_env_var.empty()) {
    const char* token = std::getenv(config_.auth_env_var.c_str());
    if (token != nullptr && token[0] != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  std::string transcript;
  double backoff = config_.initial_backoff_seconds;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    const double now =
        std::chrono::duration<double>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count();
    const double wait = bucket_.seconds_until_available(now);
    if (wait > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    bucket_.try_acquire(now + wait);

    httplib::Client cli(hostport);
    cli.set_read_timeout(30, 0);
    auto res = cli.Post(path, headers, payload, "application/json");
    if (res && res->status == 200) {
      try {
        const json reply = json::parse(res->body);
        return reply.at("text").get<std::string>();
      } catch (const std::exception& e) {
        transcript += "attempt " + std::to_string(attempt) +
                      ": malformed response body\n";
      }
    } else {
      transcript += "attempt " + std::to_string(attempt) + ": " +
                    (res ? "status " + std::to_string(res->status)
                         : "connection error") +
                    "\n";
    }
    if (attempt < config_.max_retries) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw UpstreamError("annotation request failed after " +
                      std::to_string(config_.max_retries) +
                      " retries; transcript:\n" + transcript);
}

}  // namespace vlf
