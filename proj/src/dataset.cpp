#include "vlf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "vlf/errors.hpp"
#include "vlf/hash.hpp"
#include "vlf/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vlf {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

struct Color {
  double r, g, b;
};

// Per-identity appearance drawn once from the identity stream.
struct FaceTraits {
  double cx, cy;        // base face center
  double rx, ry;        // face ellipse radii
  double drift_amp;     // center drift amplitude across frames
  double drift_phase_x, drift_phase_y;
  Color bg, bg_grad;
  Color skin;
  Color eye;
  Color mouth;
  double eye_dx, eye_dy, eye_r;
  double mouth_dy, mouth_rx, mouth_ry;
  double noise_amp;
  std::vector<double> noise;  // face-local texture field, wraps at 64
  int noise_size = 64;

  double noise_at(double u, double v) const {
    const int iu = static_cast<int>(std::floor(u)) & (noise_size - 1);
    const int iv = static_cast<int>(std::floor(v)) & (noise_size - 1);
    return noise[static_cast<std::size_t>(iv) * noise_size + iu];
  }
};

FaceTraits make_traits(Rng& rng, int image_size) {
  FaceTraits t;
  const double s = image_size;
  t.cx = s * 0.5 + rng.uniform(-1.5, 1.5);
  t.cy = s * 0.5 + rng.uniform(-1.5, 1.5);
  t.rx = s * rng.uniform(0.27, 0.33);
  t.ry = s * rng.uniform(0.33, 0.39);
  t.drift_amp = rng.uniform(0.8, 1.8);
  t.drift_phase_x = rng.uniform(0.0, 2.0 * kPi);
  t.drift_phase_y = rng.uniform(0.0, 2.0 * kPi);
  t.bg = {rng.uniform(35, 90), rng.uniform(35, 90), rng.uniform(45, 110)};
  t.bg_grad = {rng.uniform(-25, 25), rng.uniform(-25, 25), rng.uniform(-25, 25)};
  t.skin = {rng.uniform(170, 215), rng.uniform(130, 175), rng.uniform(105, 150)};
  t.eye = {rng.uniform(20, 60), rng.uniform(25, 70), rng.uniform(30, 90)};
  t.mouth = {rng.uniform(120, 175), rng.uniform(40, 75), rng.uniform(45, 80)};
  t.eye_dx = t.rx * rng.uniform(0.38, 0.50);
  t.eye_dy = t.ry * rng.uniform(0.25, 0.38);
  t.eye_r = rng.uniform(1.4, 2.2);
  t.mouth_dy = t.ry * rng.uniform(0.38, 0.55);
  t.mouth_rx = t.rx * rng.uniform(0.35, 0.5);
  t.mouth_ry = rng.uniform(1.2, 2.0);
  t.noise_amp = rng.uniform(5.0, 10.0);
  t.noise.resize(static_cast<std::size_t>(t.noise_size) * t.noise_size);
  for (auto& v : t.noise) v = rng.uniform(-1.0, 1.0);
  // One smoothing pass keeps the texture low frequency.
  std::vector<double> smooth(t.noise.size());
  for (int y = 0; y < t.noise_size; ++y)
    for (int x = 0; x < t.noise_size; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = (y + dy + t.noise_size) % t.noise_size;
          const int xx = (x + dx + t.noise_size) % t.noise_size;
          acc += t.noise[static_cast<std::size_t>(yy) * t.noise_size + xx];
        }
      smooth[static_cast<std::size_t>(y) * t.noise_size + x] = acc / 9.0;
    }
  t.noise = std::move(smooth);
  return t;
}

Image render_face(const FaceTraits& t, int image_size, int frame, int total,
                  std::uint64_t jitter_seed) {
  Image img = Image::blank(image_size, image_size);
  const double phase = total > 1 ? static_cast<double>(frame) / total : 0.0;
  const double cx = t.cx + t.drift_amp * std::sin(2 * kPi * phase + t.drift_phase_x);
  const double cy = t.cy + t.drift_amp * std::sin(2 * kPi * phase + t.drift_phase_y);
  Rng jitter(jitter_seed);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const double gy = static_cast<double>(y) / image_size;
      double r = t.bg.r + t.bg_grad.r * gy;
      double g = t.bg.g + t.bg_grad.g * gy;
      double b = t.bg.b + t.bg_grad.b * gy;
      const double ex = (x - cx) / t.rx;
      const double ey = (y - cy) / t.ry;
      const double e = ex * ex + ey * ey;
      const double face_alpha = std::clamp(4.0 * (1.0 - e), 0.0, 1.0);
      if (face_alpha > 0.0) {
        const double shade = 1.0 - 0.22 * e;
        const double n =
            t.noise_amp * t.noise_at((x - cx) * 1.7 + 24, (y - cy) * 1.7 + 24);
        double fr = t.skin.r * shade + n;
        double fg = t.skin.g * shade + n;
        double fb = t.skin.b * shade + n * 0.6;
        // Eyes.
        for (const double sx : {-1.0, 1.0}) {
          const double dx = (x - (cx + sx * t.eye_dx)) / t.eye_r;
          const double dy = (y - (cy - t.eye_dy)) / (t.eye_r * 0.8);
          const double a = std::clamp(3.0 * (1.0 - (dx * dx + dy * dy)), 0.0, 1.0);
          fr = fr * (1 - a) + t.eye.r * a;
          fg = fg * (1 - a) + t.eye.g * a;
          fb = fb * (1 - a) + t.eye.b * a;
        }
        // Mouth.
        {
          const double dx = (x - cx) / t.mouth_rx;
          const double dy = (y - (cy + t.mouth_dy)) / t.mouth_ry;
          const double a = std::clamp(3.0 * (1.0 - (dx * dx + dy * dy)), 0.0, 1.0);
          fr = fr * (1 - a) + t.mouth.r * a;
          fg = fg * (1 - a) + t.mouth.g * a;
          fb = fb * (1 - a) + t.mouth.b * a;
        }
        r = r * (1 - face_alpha) + fr * face_alpha;
        g = g * (1 - face_alpha) + fg * face_alpha;
        b = b * (1 - face_alpha) + fb * face_alpha;
      }
      // Tiny per-frame sensor jitter.
      const double jn = jitter.uniform(-2.0, 2.0);
      img.at(x, y, 0) = clamp_u8(r + jn);
      img.at(x, y, 1) = clamp_u8(g + jn);
      img.at(x, y, 2) = clamp_u8(b + jn);
    }
  }
  return img;
}

Box face_box_for(const FaceTraits& t, int image_size, int frame, int total) {
  const double phase = total > 1 ? static_cast<double>(frame) / total : 0.0;
  const double cx = t.cx + t.drift_amp * std::sin(2 * kPi * phase + t.drift_phase_x);
  const double cy = t.cy + t.drift_amp * std::sin(2 * kPi * phase + t.drift_phase_y);
  Box b;
  b.x0 = std::max(0, static_cast<int>(std::floor(cx - t.rx)));
  b.y0 = std::max(0, static_cast<int>(std::floor(cy - t.ry)));
  b.x1 = std::min(image_size, static_cast<int>(std::ceil(cx + t.rx)) + 1);
  b.y1 = std::min(image_size, static_cast<int>(std::ceil(cy + t.ry)) + 1);
  return b;
}

// Sub-rectangle of a face box given fractional offsets/sizes in [0,1].
Box sub_box(const Box& face, double fx, double fy, double fw, double fh) {
  Box b;
  b.x0 = face.x0 + static_cast<int>(std::floor(fx * face.width()));
  b.y0 = face.y0 + static_cast<int>(std::floor(fy * face.height()));
  b.x1 = std::min(face.x1, b.x0 + std::max(2, static_cast<int>(std::lround(fw * face.width()))));
  b.y1 = std::min(face.y1, b.y0 + std::max(2, static_cast<int>(std::lround(fh * face.height()))));
  return b;
}

void lerp_pixel(Image& img, int x, int y, const Color& target, double alpha) {
  img.at(x, y, 0) = clamp_u8(img.at(x, y, 0) * (1 - alpha) + target.r * alpha);
  img.at(x, y, 1) = clamp_u8(img.at(x, y, 1) * (1 - alpha) + target.g * alpha);
  img.at(x, y, 2) = clamp_u8(img.at(x, y, 2) * (1 - alpha) + target.b * alpha);
}

}  // namespace

std::string ToyVideo::video_id() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "id%03d_%s", identity,
                label == "real" ? "real" : method.c_str());
  return buf;
}

ToyVideo gen_identity(std::uint64_t seed, int id, int frames, int image_size) {
  if (frames < 1) throw DataError("gen_identity requires >= 1 frame");
  Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(id)));
  const FaceTraits traits = make_traits(rng, image_size);
  ToyVideo video;
  video.identity = id;
  video.label = "real";
  video.method = "none";
  video.frames.reserve(frames);
  video.face_boxes.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    const std::uint64_t jitter =
        mix_seed(seed, 50000 + static_cast<std::uint64_t>(id) * 1024 + f);
    video.frames.push_back(render_face(traits, image_size, f, frames, jitter));
    video.face_boxes.push_back(face_box_for(traits, image_size, f, frames));
  }
  return video;
}

ToyVideo plant_artifact(const ToyVideo& real, const std::string& method,
                        std::uint64_t seed, double strength) {
  const auto it =
      std::find(kManipulationMethods.begin(), kManipulationMethods.end(), method);
  if (it == kManipulationMethods.end()) {
    throw ConfigError("unknown manipulation method '" + method + "'");
  }
  const int method_idx =
      static_cast<int>(it - kManipulationMethods.begin()) + 1;
  Rng rng(mix_seed(seed, 2000 + static_cast<std::uint64_t>(real.identity) * 16 +
                             method_idx));

  ToyVideo fake;
  fake.identity = real.identity;
  fake.label = "fake";
  fake.method = method;
  // Truncation by up to 3 frames exercises the minimum-frame-count pairing.
  const int cut = static_cast<int>(rng.uniform_int(4));
  const int frames = std::max(1, real.frame_count() - cut);

  const int image_size = real.frames.front().width;

  // Region placement relative to the face box, fixed for the whole video.
  double fx = 0, fy = 0, fw = 0, fh = 0;
  if (method == "M1") {
    fx = rng.uniform(0.15, 0.4);
    fy = rng.uniform(0.15, 0.45);
    fw = rng.uniform(0.4, 0.55);
    fh = rng.uniform(0.25, 0.35);
  } else if (method == "M2") {
    fx = 0.2;
    fy = 0.6;
    fw = 0.6;
    fh = 0.3;
  } else if (method == "M3") {
    fx = rng.uniform(0.18, 0.28);
    fy = rng.uniform(0.18, 0.28);
    fw = 0.55;
    fh = 0.55;
  } else {  // M4
    fx = rng.uniform(0.1, 0.5);
    fy = rng.uniform(0.25, 0.55);
    fw = rng.uniform(0.35, 0.45);
    fh = rng.uniform(0.3, 0.4);
  }

  // Donor identity for patch-copy methods; never one of the corpus ids.
  const ToyVideo donor = (method == "M1" || method == "M3")
                             ? gen_identity(mix_seed(seed, 777),
                                            real.identity + 100000 + method_idx,
                                            1, image_size)
                             : ToyVideo{};

  const double warp_amp = rng.uniform(1.5, 2.5) * strength;
  const double warp_phase = rng.uniform(0.0, kPi);
  const int recolor_channel = static_cast<int>(rng.uniform_int(3));
  const double recolor_sign = rng.uniform() < 0.5 ? -1.0 : 1.0;

  for (int f = 0; f < frames; ++f) {
    Image img = real.frames[f];
    const Box face = real.face_boxes[f];
    const Box region = sub_box(face, fx, fy, fw, fh);

    if (method == "M1" || method == "M3") {
      // Copy the donor's pixels from the same relative face position.
      const Box donor_face = donor.face_boxes[0];
      const Image& dframe = donor.frames[0];
      for (int y = region.y0; y < region.y1; ++y) {
        for (int x = region.x0; x < region.x1; ++x) {
          const double relx = face.width() > 0
                                  ? static_cast<double>(x - face.x0) / face.width()
                                  : 0.0;
          const double rely = face.height() > 0
                                  ? static_cast<double>(y - face.y0) / face.height()
                                  : 0.0;
          const int dx = std::clamp(
              donor_face.x0 + static_cast<int>(relx * donor_face.width()),
              0, dframe.width - 1);
          const int dy = std::clamp(
              donor_face.y0 + static_cast<int>(rely * donor_face.height()),
              0, dframe.height - 1);
          Color c{static_cast<double>(dframe.at(dx, dy, 0)),
                  static_cast<double>(dframe.at(dx, dy, 1)),
                  static_cast<double>(dframe.at(dx, dy, 2))};
          if (method == "M3") {
            // Blatant replacement: boost contrast and add a seam.
            c.r = (c.r - 128) * 1.25 + 128;
            c.g = (c.g - 128) * 1.25 + 128;
            c.b = (c.b - 128) * 1.25 + 128;
            const bool seam = x == region.x0 || x == region.x1 - 1 ||
                              y == region.y0 || y == region.y1 - 1;
            if (seam) c = {c.r * 0.55, c.g * 0.55, c.b * 0.55};
          }
          lerp_pixel(img, x, y, c, strength);
        }
      }
    } else if (method == "M2") {
      // Horizontal row warp of the mouth region.
      const Image src = img;
      const int h = region.height();
      for (int y = region.y0; y < region.y1; ++y) {
        const double u = h > 1 ? static_cast<double>(y - region.y0) / (h - 1) : 0.0;
        const int shift =
            static_cast<int>(std::lround(warp_amp * std::sin(kPi * u + warp_phase) +
                                         warp_amp * 0.6));
        for (int x = region.x0; x < region.x1; ++x) {
          const int sx = std::clamp(x - shift, region.x0, region.x1 - 1);
          for (int c = 0; c < 3; ++c) {
            const double warped = src.at(sx, y, c);
            const double orig = src.at(x, y, c);
            img.at(x, y, c) = clamp_u8(orig * (1 - strength) + warped * strength);
          }
        }
      }
    } else {  // M4: local blur + recolor
      Image work = img;
      for (int pass = 0; pass < 2; ++pass) {
        Image prev = work;
        for (int y = region.y0; y < region.y1; ++y)
          for (int x = region.x0; x < region.x1; ++x)
            for (int c = 0; c < 3; ++c) {
              double acc = 0.0;
              int cnt = 0;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const int xx = x + dx, yy = y + dy;
                  if (xx < region.x0 || xx >= region.x1 || yy < region.y0 ||
                      yy >= region.y1)
                    continue;
                  acc += prev.at(xx, yy, c);
                  ++cnt;
                }
              work.at(x, y, c) = clamp_u8(acc / cnt);
            }
      }
      const double delta = recolor_sign * 14.0;
      for (int y = region.y0; y < region.y1; ++y)
        for (int x = region.x0; x < region.x1; ++x)
          for (int c = 0; c < 3; ++c) {
            double v = work.at(x, y, c);
            if (c == recolor_channel) v += delta;
            const double orig = img.at(x, y, c);
            img.at(x, y, c) = clamp_u8(orig * (1 - strength) + v * strength);
          }
    }

    fake.frames.push_back(std::move(img));
    fake.face_boxes.push_back(face);
    fake.artifact_boxes.push_back(region);
  }
  return fake;
}

Image self_blend_forced_mask(const Image& image, const Box& face_box,
                             std::uint64_t seed, double mask_value) {
  if (face_box.empty()) throw DataError("self_blend: zero-area face box");
  Rng rng(mix_seed(seed, 4242));
  const double brightness = rng.uniform(8.0, 25.0) * (rng.uniform() < 0.5 ? -1 : 1);
  const double contrast = rng.uniform(0.85, 1.15);
  double shift[3];
  for (double& s : shift)
    s = rng.uniform(4.0, 12.0) * (rng.uniform() < 0.5 ? -1 : 1);

  Image out = image;
  for (int y = std::max(0, face_box.y0); y < std::min(image.height, face_box.y1); ++y) {
    for (int x = std::max(0, face_box.x0); x < std::min(image.width, face_box.x1); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double tgt = image.at(x, y, c);
        const double src = std::clamp(
            (tgt - 128.0) * contrast + 128.0 + brightness + shift[c], 0.0, 255.0);
        out.at(x, y, c) = clamp_u8(mask_value * src + (1 - mask_value) * tgt);
      }
    }
  }
  return out;
}

Image self_blend(const Image& image, const Box& face_box, std::uint64_t seed) {
  if (face_box.empty()) throw DataError("self_blend: zero-area face box");
  Rng rng(mix_seed(seed, 4242));
  const double brightness = rng.uniform(8.0, 25.0) * (rng.uniform() < 0.5 ? -1 : 1);
  const double contrast = rng.uniform(0.85, 1.15);
  double shift[3];
  for (double& s : shift)
    s = rng.uniform(4.0, 12.0) * (rng.uniform() < 0.5 ? -1 : 1);

  const double mcx = 0.5 * (face_box.x0 + face_box.x1);
  const double mcy = 0.5 * (face_box.y0 + face_box.y1);
  const double mrx = 0.42 * face_box.width();
  const double mry = 0.42 * face_box.height();

  Image out = image;
  for (int y = std::max(0, face_box.y0); y < std::min(image.height, face_box.y1); ++y) {
    for (int x = std::max(0, face_box.x0); x < std::min(image.width, face_box.x1); ++x) {
      const double ex = (x - mcx) / mrx;
      const double ey = (y - mcy) / mry;
      const double m = std::clamp(1.5 * (1.0 - (ex * ex + ey * ey)), 0.0, 1.0);
      if (m <= 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        const double tgt = image.at(x, y, c);
        const double src = std::clamp(
            (tgt - 128.0) * contrast + 128.0 + brightness + shift[c], 0.0, 255.0);
        out.at(x, y, c) = clamp_u8(m * src + (1 - m) * tgt);
      }
    }
  }
  return out;
}

// ---- on-disk corpus ---------------------------------------------------------

std::vector<ToyVideo> generate_corpus(const CorpusParams& params,
                                      std::uint64_t seed) {
  std::vector<ToyVideo> videos;
  videos.reserve(static_cast<std::size_t>(params.identities) * 5);
  for (int id = 0; id < params.identities; ++id) {
    const int span = params.max_frames - params.min_frames + 1;
    const int frames =
        params.min_frames +
        static_cast<int>(mix_seed(seed, 300 + static_cast<std::uint64_t>(id)) %
                         static_cast<std::uint64_t>(span));
    ToyVideo real = gen_identity(seed, id, frames, params.image_size);
    std::vector<ToyVideo> fakes;
    for (const std::string& method : kManipulationMethods) {
      fakes.push_back(
          plant_artifact(real, method, seed, params.artifact_strength));
    }
    videos.push_back(std::move(real));
    for (ToyVideo& f : fakes) videos.push_back(std::move(f));
  }
  return videos;
}

namespace {

json box_to_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from_json(const json& j) {
  return Box{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(),
             j.at(3).get<int>()};
}

std::string frame_filename(int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", idx);
  return buf;
}

}  // namespace

std::string write_corpus(const std::string& dir, const CorpusParams& params,
                         std::uint64_t seed) {
  fs::create_directories(dir);
  const auto videos = generate_corpus(params, seed);
  const std::string index_path = (fs::path(dir) / "index.jsonl").string();
  std::ofstream index(index_path);
  if (!index) throw DataError("cannot open " + index_path + " for writing");
  for (const ToyVideo& video : videos) {
    const std::string vid = video.video_id();
    const fs::path vdir = fs::path(dir) / "videos" / vid;
    fs::create_directories(vdir);
    for (int f = 0; f < video.frame_count(); ++f) {
      write_ppm((vdir / frame_filename(f)).string(), video.frames[f]);
    }
    json rec;
    rec["id"] = vid;
    rec["identity"] = video.identity;
    rec["label"] = video.label;
    rec["method"] = video.method;
    rec["path"] = (fs::path("videos") / vid).string();
    rec["frames"] = video.frame_count();
    json fb = json::array();
    for (const Box& b : video.face_boxes) fb.push_back(box_to_json(b));
    rec["face_boxes"] = fb;
    if (!video.artifact_boxes.empty()) {
      json ab = json::array();
      for (const Box& b : video.artifact_boxes) ab.push_back(box_to_json(b));
      rec["artifact_boxes"] = ab;
    }
    index << rec.dump() << "\n";
  }
  index.flush();
  if (!index) throw DataError("write failed for " + index_path);

  json meta;
  meta["seed"] = seed;
  meta["identities"] = params.identities;
  meta["image_size"] = params.image_size;
  meta["min_frames"] = params.min_frames;
  meta["max_frames"] = params.max_frames;
  meta["artifact_strength"] = params.artifact_strength;
  std::ofstream metaf((fs::path(dir) / "corpus.json").string());
  metaf << meta.dump(2) << "\n";
  return index_path;
}

Corpus load_corpus_index(const std::string& index_path) {
  std::ifstream in(index_path);
  if (!in) throw DataError("cannot open " + index_path);
  const fs::path base = fs::path(index_path).parent_path();
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    VideoRecord v;
    v.id = rec.at("id").get<std::string>();
    v.identity = rec.at("identity").get<int>();
    v.label = rec.at("label").get<std::string>();
    v.method = rec.at("method").get<std::string>();
    v.path = (base / rec.at("path").get<std::string>()).string();
    v.frames = rec.at("frames").get<int>();
    for (const json& b : rec.at("face_boxes")) {
      v.face_boxes.push_back(box_from_json(b));
    }
    if (rec.contains("artifact_boxes")) {
      for (const json& b : rec.at("artifact_boxes")) {
        v.artifact_boxes.push_back(box_from_json(b));
      }
    }
    corpus.videos.push_back(std::move(v));
  }
  const fs::path meta_path = base / "corpus.json";
  if (fs::exists(meta_path)) {
    std::ifstream metaf(meta_path);
    json meta;
    metaf >> meta;
    corpus.seed = meta.value("seed", 0ULL);
    corpus.params.identities = meta.value("identities", 0);
    corpus.params.image_size = meta.value("image_size", 32);
    corpus.params.min_frames = meta.value("min_frames", 24);
    corpus.params.max_frames = meta.value("max_frames", 32);
    corpus.params.artifact_strength = meta.value("artifact_strength", 1.0);
  }
  return corpus;
}

Image load_frame(const VideoRecord& video, int frame_idx) {
  if (frame_idx < 0 || frame_idx >= video.frames) {
    throw DataError("frame " + std::to_string(frame_idx) + " out of range for " +
                    video.id);
  }
  return read_ppm((fs::path(video.path) / frame_filename(frame_idx)).string());
}

std::string corpus_content_hash(const std::string& index_path) {
  const Corpus corpus = load_corpus_index(index_path);
  std::string acc = sha256_file(index_path);
  for (const VideoRecord& v : corpus.videos) {
    for (int f = 0; f < v.frames; ++f) {
      acc += sha256_file((fs::path(v.path) / frame_filename(f)).string());
    }
  }
  return sha256_hex(acc);
}

}  // namespace vlf
