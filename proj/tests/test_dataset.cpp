#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "vlf/dataset.hpp"
#include "vlf/errors.hpp"
#include "vlf/hash.hpp"

using namespace vlf;
namespace fs = std::filesystem;

namespace {

int masked_pixel_diff(const Image& a, const Image& b, const Box& box) {
  int count = 0;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x)
      for (int c = 0; c < 3; ++c)
        if (a.at(x, y, c) != b.at(x, y, c)) ++count;
  return count;
}

int outside_box_diff(const Image& a, const Image& b, const Box& box) {
  int count = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) continue;
      for (int c = 0; c < 3; ++c)
        if (a.at(x, y, c) != b.at(x, y, c)) ++count;
    }
  return count;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("gen_identity is deterministic and id-sensitive") {
  const ToyVideo a = gen_identity(7, 3, 5);
  const ToyVideo b = gen_identity(7, 3, 5);
  REQUIRE(a.frame_count() == 5);
  for (int f = 0; f < 5; ++f) {
    CHECK(hash_image(a.frames[f]) == hash_image(b.frames[f]));
  }

  const ToyVideo c = gen_identity(7, 4, 5);
  int diff = 0;
  for (std::size_t i = 0; i < a.frames[0].rgb.size(); ++i) {
    if (a.frames[0].rgb[i] != c.frames[0].rgb[i]) ++diff;
  }
  CHECK(diff > 0);

  const ToyVideo single = gen_identity(7, 3, 1);
  CHECK(single.frame_count() == 1);
  CHECK_THROWS_AS(gen_identity(7, 3, 0), DataError);
}

TEST_CASE("plant_artifact stays inside the face box and always changes it") {
  const ToyVideo real = gen_identity(11, 2, 8);
  for (const std::string& method : kManipulationMethods) {
    for (const double strength : {1.0, 0.7}) {
      const ToyVideo fake = plant_artifact(real, method, 11, strength);
      CHECK(fake.method == method);
      CHECK(fake.label == "fake");
      CHECK(fake.frame_count() <= real.frame_count());
      CHECK(fake.frame_count() >= real.frame_count() - 3);
      for (int f = 0; f < fake.frame_count(); ++f) {
        CHECK(masked_pixel_diff(real.frames[f], fake.frames[f],
                                fake.face_boxes[f]) > 0);
        CHECK(outside_box_diff(real.frames[f], fake.frames[f],
                               fake.face_boxes[f]) == 0);
        const Box& art = fake.artifact_boxes[f];
        const Box& face = fake.face_boxes[f];
        CHECK(art.x0 >= face.x0);
        CHECK(art.y0 >= face.y0);
        CHECK(art.x1 <= face.x1);
        CHECK(art.y1 <= face.y1);
        // All changes stay inside the recorded artifact region.
        CHECK(masked_pixel_diff(real.frames[f], fake.frames[f], art) > 0);
      }
    }
  }
  CHECK_THROWS_AS(plant_artifact(real, "M9", 11, 1.0), ConfigError);
}

TEST_CASE("self_blend endpoints and convexity") {
  const ToyVideo real = gen_identity(3, 0, 1);
  const Image& img = real.frames[0];
  const Box face = real.face_boxes[0];

  const Image zero = self_blend_forced_mask(img, face, 5, 0.0);
  CHECK(zero == img);

  const Image one = self_blend_forced_mask(img, face, 5, 1.0);
  // Inside the box the output equals the transformed source: re-derive it
  // by asking for mask zero and comparing against a direct recompute.
  int inside_changed = 0;
  for (int y = face.y0; y < face.y1; ++y)
    for (int x = face.x0; x < face.x1; ++x)
      for (int c = 0; c < 3; ++c)
        if (one.at(x, y, c) != img.at(x, y, c)) ++inside_changed;
  CHECK(inside_changed > 0);
  CHECK(outside_box_diff(one, img, face) == 0);

  // Convexity: every blended pixel lies between the two endpoints.
  const Image blended = self_blend(img, face, 5);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int lo = std::min(img.at(x, y, c), one.at(x, y, c));
        const int hi = std::max(img.at(x, y, c), one.at(x, y, c));
        CHECK(blended.at(x, y, c) >= lo);
        CHECK(blended.at(x, y, c) <= hi);
      }

  CHECK_THROWS_AS(self_blend(img, Box{5, 5, 5, 9}, 1), DataError);
}

TEST_CASE("corpus structure and determinism on disk") {
  TempDir dir("vlf_corpus_test");
  CorpusParams params;
  params.identities = 3;
  const std::string index = write_corpus(dir.path.string(), params, 21);
  const Corpus corpus = load_corpus_index(index);

  REQUIRE(corpus.videos.size() == 15);
  std::set<int> identities;
  for (int id = 0; id < 3; ++id) {
    int real_count = 0;
    std::set<std::string> methods;
    int real_frames = 0;
    for (const VideoRecord& v : corpus.videos) {
      if (v.identity != id) continue;
      identities.insert(v.identity);
      if (v.label == "real") {
        ++real_count;
        real_frames = v.frames;
        CHECK(v.method == "none");
      } else {
        methods.insert(v.method);
      }
    }
    CHECK(real_count == 1);
    CHECK(methods == std::set<std::string>{"M1", "M2", "M3", "M4"});
    for (const VideoRecord& v : corpus.videos) {
      if (v.identity == id && v.label == "fake") {
        CHECK(v.frames <= real_frames);
      }
    }
  }
  CHECK(identities.size() == 3);

  // Frames load back and match the in-memory generation.
  const auto mem = generate_corpus(params, 21);
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    CHECK(corpus.videos[i].id == mem[i].video_id());
    const Image disk0 = load_frame(corpus.videos[i], 0);
    CHECK(hash_image(disk0) == hash_image(mem[i].frames[0]));
  }

  const std::string h1 = corpus_content_hash(index);
  TempDir dir2("vlf_corpus_test2");
  const std::string index2 = write_corpus(dir2.path.string(), params, 21);
  CHECK(corpus_content_hash(index2) == h1);

  // Different seed family gives different content.
  TempDir dir3("vlf_corpus_test3");
  const std::string index3 = write_corpus(dir3.path.string(), params, 22);
  CHECK(corpus_content_hash(index3) != h1);
}

TEST_CASE("face crop windows keep the box centered at fixed margin") {
  const ToyVideo real = gen_identity(13, 1, 2);
  const Box box = real.face_boxes[0];
  const WindowD w = expand_box(box, 0.125, 32, 32);
  // Clamping can trim the window; the box must always sit inside it.
  CHECK(w.x0 <= box.x0);
  CHECK(w.y0 <= box.y0);
  CHECK(w.x1 >= box.x1);
  CHECK(w.y1 >= box.y1);

  const Image crop = crop_resize(real.frames[0], w, 32);
  CHECK(crop.width == 32);
  CHECK(crop.height == 32);
  const WindowD mapped = map_box_to_crop(box, w, 32);
  CHECK(mapped.x0 >= 0.0);
  CHECK(mapped.y0 >= 0.0);
  CHECK(mapped.x1 <= 32.0);
  CHECK(mapped.y1 <= 32.0);
  // At 12.5% margin the face box covers ~80% of the crop on each axis.
  CHECK(mapped.x1 - mapped.x0 >= 0.75 * 32);
  CHECK(mapped.y1 - mapped.y0 >= 0.75 * 32);
}
