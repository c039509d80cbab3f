#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <filesystem>
#include <set>
#include <thread>

#include "httplib.h"
#include "vlf/annotate.hpp"
#include "vlf/errors.hpp"
#include "vlf/hash.hpp"
#include "vlf/pipeline.hpp"

using namespace vlf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

VideoRecord fake_record(int identity, const std::string& method, int frames) {
  VideoRecord v;
  v.identity = identity;
  v.label = method == "none" ? "real" : "fake";
  v.method = method;
  v.id = "id" + std::to_string(identity) + "_" +
         (v.label == "real" ? "real" : method);
  v.frames = frames;
  return v;
}

Corpus tiny_corpus_meta(int identities, std::uint64_t seed) {
  CorpusParams params;
  params.identities = identities;
  params.min_frames = 8;
  params.max_frames = 10;
  return corpus_from_videos(generate_corpus(params, seed), params, seed);
}

// Always returns an over-long "real" explanation: fails the 40-word limit.
struct RamblingClient : LlmClient {
  std::string complete(const LlmRequest& request) override {
    if (request.images.size() == 1) {
      std::string out = "this face is real and";
      for (int i = 0; i < 45; ++i) out += " very";
      return out + " normal.";
    }
    MockLlmClient inner{corpus};
    return inner.complete(request);
  }
  std::string id() const override { return "rambling"; }
  Corpus corpus;
};

// Fails validation for the first `bad_attempts` summary calls.
struct FlakySummarizer : LlmClient {
  std::string complete(const LlmRequest&) override {
    if (calls++ < bad_attempts) {
      return "Two sentences. Not allowed.";
    }
    return "This method does one simple thing to the face.";
  }
  std::string id() const override { return "flaky"; }
  int calls = 0;
  int bad_attempts = 0;
};

}  // namespace

TEST_CASE("pair_frames shares the min-frame-count index grid") {
  const VideoRecord real = fake_record(3, "none", 100);
  std::vector<VideoRecord> fakes = {
      fake_record(3, "M1", 98), fake_record(3, "M2", 102),
      fake_record(3, "M3", 97), fake_record(3, "M4", 100)};
  const auto pairs = pair_frames(real, fakes, 8);
  REQUIRE(pairs.size() == 32);
  const std::vector<int> expected = {0, 13, 27, 41, 54, 68, 82, 96};
  std::map<std::string, std::set<int>> per_method;
  for (const FramePair& p : pairs) {
    per_method[p.method].insert(p.frame_idx);
    CHECK(p.real.frame_idx == p.fake.frame_idx);
    CHECK(p.real.video_id == real.id);
  }
  for (const auto& [method, indices] : per_method) {
    CHECK(indices == std::set<int>(expected.begin(), expected.end()));
  }

  const auto single = pair_frames(real, fakes, 1);
  REQUIRE(single.size() == 4);
  for (const FramePair& p : single) CHECK(p.frame_idx == 0);

  // Equal lengths: T_min is just that length.
  std::vector<VideoRecord> equal = {
      fake_record(3, "M1", 100), fake_record(3, "M2", 100),
      fake_record(3, "M3", 100), fake_record(3, "M4", 100)};
  const auto eq_pairs = pair_frames(real, equal, 4);
  for (const FramePair& p : eq_pairs) CHECK(p.frame_idx <= 99);

  // K above the minimum clamps (with a warning on stderr).
  std::vector<VideoRecord> shorty = {
      fake_record(3, "M1", 3), fake_record(3, "M2", 100),
      fake_record(3, "M3", 100), fake_record(3, "M4", 100)};
  const auto clamped = pair_frames(real, shorty, 8);
  CHECK(clamped.size() == 4 * 3);

  std::vector<VideoRecord> wrong = fakes;
  wrong[1].identity = 4;
  CHECK_THROWS_AS(pair_frames(real, wrong, 4), DataError);
}

TEST_CASE("cfad prompt embeds the summary and lists the real image first") {
  FramePair pair;
  pair.identity = 1;
  pair.method = "M2";
  pair.frame_idx = 5;
  pair.real = {"id001_real", 5, ""};
  pair.fake = {"id001_M2", 5, ""};
  MtsSummary summary{"M2", "desc",
                     "This method bends pixels around the mouth."};
  const std::string prompt = build_cfad_prompt(pair, summary);
  const auto summary_pos = prompt.find(summary.summary);
  const auto rephrase_pos = prompt.find("rephrase");
  REQUIRE(summary_pos != std::string::npos);
  REQUIRE(rephrase_pos != std::string::npos);
  CHECK(summary_pos < rephrase_pos);
  const auto real_pos = prompt.find("id001_real#5");
  const auto fake_pos = prompt.find("id001_M2#5");
  REQUIRE(real_pos != std::string::npos);
  REQUIRE(fake_pos != std::string::npos);
  CHECK(real_pos < fake_pos);
  CHECK(sha256_hex(prompt) == sha256_hex(build_cfad_prompt(pair, summary)));

  MtsSummary wrong = summary;
  wrong.method = "M3";
  CHECK_THROWS_AS(build_cfad_prompt(pair, wrong), ContractError);

  // Ablations: drop the paired-image framing / the summary block.
  const std::string no_cfad =
      build_cfad_prompt(pair, summary, {.use_cfad = false, .use_mts = true});
  CHECK(no_cfad.find("id001_real#5") == std::string::npos);
  const std::string no_mts =
      build_cfad_prompt(pair, summary, {.use_cfad = true, .use_mts = false});
  CHECK(no_mts.find("Technique summary") == std::string::npos);
}

TEST_CASE("real prompt is the exact fixed wording") {
  const std::string prompt = build_real_prompt();
  CHECK(prompt.starts_with("As a face forgery detection expert"));
  CHECK(prompt.find("no more than 40 words") != std::string::npos);
  CHECK(prompt == build_real_prompt());
  CHECK(prompt ==
        "As a face forgery detection expert, you will receive a real image. "
        "Please provide a concise explanation of why it is real in no more "
        "than 40 words. Begin with 'This/The image/face'.");
}

TEST_CASE("technique summarization validates and retries") {
  const Corpus corpus = tiny_corpus_meta(1, 5);
  MockLlmClient mock(corpus);
  const auto descriptions = default_method_descriptions();
  std::set<std::string> seen;
  for (const auto& [method, desc] : descriptions) {
    const MtsSummary s = summarize_technique(method, desc, mock);
    CHECK(s.method == method);
    CHECK(validate_summary_text(s.summary).empty());
    seen.insert(s.summary);
  }
  CHECK(seen.size() == 4);

  FlakySummarizer flaky;
  flaky.bad_attempts = 2;
  const MtsSummary ok = summarize_technique("M1", "desc", flaky, 3);
  CHECK(ok.summary == "This method does one simple thing to the face.");
  CHECK(flaky.calls == 3);

  FlakySummarizer hopeless;
  hopeless.bad_attempts = 1000;
  CHECK_THROWS_AS(summarize_technique("M1", "desc", hopeless, 2),
                  UpstreamError);
  CHECK_THROWS_AS(summarize_technique("M1", "", hopeless, 2), DataError);
}

TEST_CASE("validate_annotation rules") {
  AnnotationRecord ok;
  ok.video_id = "id000_M1";
  ok.frame_idx = 0;
  ok.label = "fake";
  ok.method = "M1";
  ok.answer = "Yes, there is a seam.";
  CHECK(validate_annotation(ok).empty());

  AnnotationRecord wrong_prefix = ok;
  wrong_prefix.answer = "No, looks fine.";
  const auto v1 = validate_annotation(wrong_prefix);
  REQUIRE(!v1.empty());
  CHECK(v1[0].find("prefix/label") != std::string::npos);

  AnnotationRecord wordy;
  wordy.video_id = "id000_real";
  wordy.label = "real";
  wordy.method = "none";
  wordy.answer = "No,";
  for (int i = 0; i < 45; ++i) wordy.answer += " word";
  const auto v2 = validate_annotation(wordy);
  REQUIRE(!v2.empty());
  CHECK(v2[0].find("word limit") != std::string::npos);

  AnnotationRecord bad_question = ok;
  bad_question.question = "Is this image fake?";
  CHECK(!validate_annotation(bad_question).empty());

  AnnotationRecord empty = ok;
  empty.answer.clear();
  CHECK(!validate_annotation(empty).empty());
}

TEST_CASE("mock annotation run: prefixes, counts, resume, determinism") {
  const Corpus corpus = tiny_corpus_meta(3, 12);
  MockLlmClient mock(corpus);
  AnnotationConfig config;
  config.pairs_per_method = 3;

  TempDir dir("vlf_annotate_test");
  const std::string out = (dir.path / "annotations.jsonl").string();
  const std::string quarantine = (dir.path / "quarantine.jsonl").string();

  const AnnotationRunStats stats =
      annotate_corpus(corpus, mock, config, out, quarantine);
  CHECK(stats.written == 3 * 3 * 5);  // identities * K * (real + 4 fakes)
  CHECK(stats.quarantined == 0);
  CHECK(!fs::exists(quarantine));

  const auto records = load_annotations(out);
  REQUIRE(static_cast<int>(records.size()) == stats.written);
  for (const AnnotationRecord& r : records) {
    CHECK(validate_annotation(r).empty());
    if (r.label == "fake") {
      CHECK(r.answer.starts_with("Yes,"));
    } else {
      CHECK(r.answer.starts_with("No,"));
    }
    CHECK(r.question == "Is this image manipulated?");
    CHECK(r.generator == "mock");
    CHECK(r.prompt_sha256.size() == 64);
  }

  // Completed corpus: rerun writes nothing new.
  const AnnotationRunStats again =
      annotate_corpus(corpus, mock, config, out, quarantine);
  CHECK(again.written == 0);
  CHECK(again.skipped == stats.written);
  CHECK(load_annotations(out).size() == records.size());

  // Determinism: a fresh run over the same corpus hashes identically.
  TempDir dir2("vlf_annotate_test2");
  const std::string out2 = (dir2.path / "annotations.jsonl").string();
  annotate_corpus(corpus, mock, config, out2,
                  (dir2.path / "q.jsonl").string());
  CHECK(sha256_file(out) == sha256_file(out2));

  // Parallel workers keep the same deterministic output.
  TempDir dir3("vlf_annotate_test3");
  AnnotationConfig parallel = config;
  parallel.parallelism = 4;
  const std::string out3 = (dir3.path / "annotations.jsonl").string();
  annotate_corpus(corpus, mock, parallel, out3, (dir3.path / "q.jsonl").string());
  CHECK(sha256_file(out3) == sha256_file(out));
}

TEST_CASE("invalid responses land in quarantine and the run continues") {
  const Corpus corpus = tiny_corpus_meta(2, 13);
  RamblingClient bad;
  bad.corpus = corpus;
  AnnotationConfig config;
  config.pairs_per_method = 2;
  config.max_retries = 1;

  TempDir dir("vlf_annotate_quarantine");
  const std::string out = (dir.path / "annotations.jsonl").string();
  const std::string quarantine = (dir.path / "quarantine.jsonl").string();
  const AnnotationRunStats stats =
      annotate_corpus(corpus, bad, config, out, quarantine);
  CHECK(stats.quarantined == 2 * 2);  // every real frame fails the word limit
  CHECK(stats.written == 2 * 2 * 4);  // fakes still annotate fine
  CHECK(fs::exists(quarantine));
  // Counts reconcile: every selected frame produced a record or an entry.
  CHECK(stats.written + stats.quarantined == 2 * 2 * 5);
}

TEST_CASE("token bucket refills at the configured rate") {
  TokenBucket bucket(2.0, 60.0);  // one token per second
  CHECK(bucket.try_acquire(0.0));
  CHECK(bucket.try_acquire(0.0));
  CHECK(!bucket.try_acquire(0.0));
  CHECK(bucket.seconds_until_available(0.0) == doctest::Approx(1.0));
  CHECK(bucket.try_acquire(1.0));
  CHECK(!bucket.try_acquire(1.2));
  CHECK(bucket.try_acquire(2.5));
}

TEST_CASE("base64 known vectors") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
}

TEST_CASE("http client round trip against a local server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/annotate", [&](const httplib::Request& req,
                                  httplib::Response& res) {
    ++hits;
    if (req.has_header("Authorization")) {
      seen_auth = req.get_header_value("Authorization");
    }
    if (hits.load() < 2) {  // first attempt fails, client must retry
      res.status = 503;
      return;
    }
    res.set_content("{\"text\": \"No, this face looks ordinary.\"}",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("VLF_TEST_TOKEN", "sekret", 1);
  HttpClientConfig config;
  config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/annotate";
  config.auth_env_var = "VLF_TEST_TOKEN";
  config.model = "toy-annotator";
  config.requests_per_minute = 6000.0;
  config.max_retries = 3;
  config.initial_backoff_seconds = 0.01;
  HttpLlmClient client(config);

  const std::string text = client.complete({"describe", {}});
  CHECK(text == "No, this face looks ordinary.");
  CHECK(hits.load() == 2);
  CHECK(seen_auth == "Bearer sekret");

  server.stop();
  listener.join();
}

TEST_CASE("http client surfaces an upstream error after retries") {
  HttpClientConfig config;
  config.endpoint = "http://127.0.0.1:9/unreachable";  // discard port
  config.max_retries = 1;
  config.initial_backoff_seconds = 0.01;
  config.requests_per_minute = 6000.0;
  HttpLlmClient client(config);
  CHECK_THROWS_AS(client.complete({"hello", {}}), UpstreamError);
}
