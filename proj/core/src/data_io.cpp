#include "cdt/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "cdt/rng.hpp"

namespace cdt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::string& what) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw DataError(what + ": truncated header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

constexpr uint64_t kMaxElements = uint64_t{1} << 40;

}  // namespace

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  out.write(kContainerMagic, 4);
  put_le<uint32_t>(out, kContainerVersion);
  put_le<uint32_t>(out, kDtypeF32);
  put_le<uint32_t>(out, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) put_le<uint64_t>(out, static_cast<uint64_t>(d));
  std::vector<unsigned char> bytes(static_cast<std::size_t>(t.numel()) * 4);
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t u;
    std::memcpy(&u, &t.data()[i], 4);
    for (int k = 0; k < 4; ++k) bytes[static_cast<std::size_t>(i * 4 + k)] = static_cast<unsigned char>(u >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed to write tensor container");
}

Tensor<float> read_tensor(std::istream& in, const std::string& what) {
  char magic[4];
  if (!in.read(magic, 4)) throw DataError(what + ": truncated header");
  if (std::memcmp(magic, kContainerMagic, 4) != 0) throw DataError(what + ": bad magic, not a CDT1 container");
  const auto version = get_le<uint32_t>(in, what);
  if (version != kContainerVersion) throw DataError(what + ": unsupported container version " + std::to_string(version));
  const auto dtype = get_le<uint32_t>(in, what);
  if (dtype != kDtypeF32) throw DataError(what + ": unsupported dtype code " + std::to_string(dtype));
  const auto rank = get_le<uint32_t>(in, what);
  if (rank > 16) throw DataError(what + ": implausible rank " + std::to_string(rank));
  Shape shape;
  uint64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const auto d = get_le<uint64_t>(in, what);
    if (d > kMaxElements || (d > 0 && n > kMaxElements / d)) throw DataError(what + ": implausible dims");
    n *= d;
    shape.push_back(static_cast<int64_t>(d));
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * 4);
  if (!bytes.empty() && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(what + ": payload shorter than " + std::to_string(n) + " elements");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(what + ": trailing bytes after payload");
  Tensor<float> t(shape);
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<uint32_t>(bytes[i * 4 + static_cast<uint64_t>(k)]) << (8 * k);
    std::memcpy(&t.data()[i], &u, 4);
  }
  return t;
}

void write_tensor(const fs::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor<float> read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tensor(in, path.string());
}

void write_ppm(const fs::path& path, const Image& img) {
  if (static_cast<int64_t>(img.rgb.size()) != img.width * img.height * 3) throw ShapeError("image buffer size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw DataError("failed to write " + path.string());
}

namespace {

/// Next header token of a PPM, skipping whitespace and comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      break;
    }
  }
  while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(in.get()));
  return tok;
}

}  // namespace

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open frame " + path.string());
  if (ppm_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM");
  Image img;
  int64_t maxval = 0;
  try {
    img.width = std::stoll(ppm_token(in));
    img.height = std::stoll(ppm_token(in));
    maxval = std::stoll(ppm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (img.width <= 0 || img.height <= 0 || maxval != 255) throw DataError(path.string() + ": unsupported PPM header");
  in.get();
  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  if (!in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  return img;
}

std::vector<ClipEntry> DatasetManifest::split(const std::string& tag) const {
  std::vector<ClipEntry> out;
  for (const auto& c : clips)
    if (c.split == tag) out.push_back(c);
  return out;
}

void DatasetManifest::save(const fs::path& path) const {
  json j;
  j["format"] = "cdt-dataset";
  j["version"] = 1;
  j["preprocess"] = {{"resize", spec.resize}, {"crop", spec.crop}, {"frames", spec.frames}};
  j["clips"] = json::array();
  for (const auto& c : clips) {
    j["clips"].push_back({{"path", c.path},
                          {"frames", c.frames},
                          {"width", c.width},
                          {"height", c.height},
                          {"split", c.split},
                          {"velocity", {c.velocity[0], c.velocity[1]}}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "cdt-dataset") throw DataError(path.string() + ": not a dataset manifest");
    const json& p = j.at("preprocess");
    m.spec.resize = p.value("resize", int64_t{0});
    m.spec.crop = p.at("crop").get<int64_t>();
    m.spec.frames = p.at("frames").get<int64_t>();
    for (const json& c : j.at("clips")) {
      ClipEntry e;
      e.path = c.at("path").get<std::string>();
      e.frames = c.at("frames").get<int64_t>();
      e.width = c.value("width", int64_t{0});
      e.height = c.value("height", int64_t{0});
      e.split = c.value("split", std::string("train"));
      if (c.contains("velocity")) e.velocity = {c["velocity"][0].get<int>(), c["velocity"][1].get<int>()};
      m.clips.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

fs::path frame_path(const fs::path& clip_dir, int64_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04lld.ppm", static_cast<long long>(index));
  return clip_dir / name;
}

Image resize_bilinear(const Image& src, int64_t width, int64_t height) {
  if (width == src.width && height == src.height) return src;
  Image dst{width, height, std::vector<uint8_t>(static_cast<std::size_t>(width * height * 3))};
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  for (int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int64_t yy, int64_t xx) { return static_cast<double>(src.rgb[static_cast<std::size_t>((yy * src.width + xx) * 3 + c)]); };
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        dst.rgb[static_cast<std::size_t>((y * width + x) * 3 + c)] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return dst;
}

VideoTensor load_clip(const fs::path& root, const ClipEntry& entry, const PreprocessSpec& spec) {
  if (spec.crop <= 0 || spec.frames <= 0) throw ConfigError("preprocess crop and frames must be positive");
  const fs::path dir = root / entry.path;
  int64_t available = 0;
  while (fs::exists(frame_path(dir, available))) ++available;
  if (available < spec.frames) {
    throw DataError(dir.string() + ": needs " + std::to_string(spec.frames) + " frames, found " +
                    std::to_string(available));
  }
  const int64_t crop = spec.crop;
  const int64_t short_target = spec.resize > 0 ? spec.resize : crop;
  if (short_target < crop) throw ConfigError("resize target smaller than crop");
  Tensor<float> data({spec.frames, crop, crop, 3});
  for (int64_t t = 0; t < spec.frames; ++t) {
    const Image src = read_ppm(frame_path(dir, t));
    const int64_t short_side = std::min(src.width, src.height);
    if (short_side < crop) {
      throw DataError(dir.string() + ": resolution " + std::to_string(src.width) + "x" + std::to_string(src.height) +
                      " smaller than crop " + std::to_string(crop));
    }
    const double scale = static_cast<double>(short_target) / static_cast<double>(short_side);
    const int64_t rw = src.width == short_side ? short_target : std::max<int64_t>(crop, std::lround(src.width * scale));
    const int64_t rh = src.height == short_side ? short_target : std::max<int64_t>(crop, std::lround(src.height * scale));
    const Image img = resize_bilinear(src, rw, rh);
    const int64_t ox = (rw - crop) / 2, oy = (rh - crop) / 2;
    float* dst = data.data() + t * crop * crop * 3;
    for (int64_t y = 0; y < crop; ++y) {
      for (int64_t x = 0; x < crop; ++x) {
        for (int c = 0; c < 3; ++c) {
          const uint8_t v = img.rgb[static_cast<std::size_t>(((y + oy) * rw + (x + ox)) * 3 + c)];
          dst[(y * crop + x) * 3 + c] = static_cast<float>(static_cast<double>(v) / 127.5 - 1.0);
        }
      }
    }
  }
  return VideoTensor(std::move(data));
}

VideoTensor load_clip(const DatasetManifest& manifest, const ClipEntry& entry) {
  return load_clip(manifest.root, entry, manifest.spec);
}

namespace {

struct SyntheticClip {
  std::array<int, 2> velocity;
  std::array<double, 3> base, amp, phase;
  std::array<int, 2> freq;
  struct Square {
    int x, y, size;
    std::array<double, 3> color;
  };
  std::vector<Square> squares;
};

SyntheticClip synthetic_params(uint64_t seed, int clip, int resolution) {
  Rng rng(derive_seed(seed, {0x53594eULL, static_cast<uint64_t>(clip)}));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uint = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  SyntheticClip p;
  do {
    p.velocity = {uint(-2, 2), uint(-2, 2)};
  } while (p.velocity[0] == 0 && p.velocity[1] == 0);
  do {
    p.freq = {uint(0, 3), uint(0, 3)};
  } while (p.freq[0] == 0 && p.freq[1] == 0);
  for (int c = 0; c < 3; ++c) {
    p.base[c] = uni(0.25, 0.6);
    p.amp[c] = uni(0.1, 0.25);
    p.phase[c] = uni(0.0, 2.0 * std::numbers::pi);
  }
  const int n = uint(2, 3);
  const int max_size = std::max(2, resolution / 4);
  for (int i = 0; i < n; ++i) {
    SyntheticClip::Square s{uint(0, resolution - 1), uint(0, resolution - 1), uint(std::max(1, max_size / 2), max_size), {}};
    for (int c = 0; c < 3; ++c) s.color[c] = uni(0.0, 1.0);
    p.squares.push_back(s);
  }
  return p;
}

int wrap(int64_t v, int r) { return static_cast<int>(((v % r) + r) % r); }

}  // namespace

std::array<int, 2> synthetic_velocity(uint64_t seed, int clip) { return synthetic_params(seed, clip, 8).velocity; }

Image synthetic_frame(uint64_t seed, int clip, int resolution, int t) {
  const SyntheticClip p = synthetic_params(seed, clip, resolution);
  const int r = resolution;
  Image img{r, r, std::vector<uint8_t>(static_cast<std::size_t>(r * r * 3))};
  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      const int u = wrap(int64_t{x} - int64_t{p.velocity[0]} * t, r);
      const int v = wrap(int64_t{y} - int64_t{p.velocity[1]} * t, r);
      std::array<double, 3> px;
      const double arg = 2.0 * std::numbers::pi * (p.freq[0] * u + p.freq[1] * v) / r;
      for (int c = 0; c < 3; ++c) px[c] = p.base[c] + p.amp[c] * std::sin(arg + p.phase[c]);
      for (const auto& s : p.squares) {
        if (wrap(u - s.x, r) < s.size && wrap(v - s.y, r) < s.size) px = s.color;
      }
      for (int c = 0; c < 3; ++c) {
        img.rgb[static_cast<std::size_t>((y * r + x) * 3 + c)] =
            static_cast<uint8_t>(std::clamp(std::lround(px[c] * 255.0), 0L, 255L));
      }
    }
  }
  return img;
}

DatasetManifest make_synthetic_dataset(const fs::path& dir, uint64_t seed, int n_clips, int resolution, int frames,
                                       int heldout) {
  if (n_clips < 1 || resolution < 1 || frames < 1) throw ConfigError("synthetic dataset parameters must be positive");
  if (heldout < 0 || heldout > n_clips) throw ConfigError("heldout count out of range");
  fs::create_directories(dir);
  DatasetManifest m;
  m.root = dir;
  m.spec = {0, resolution, frames};
  for (int i = 0; i < n_clips; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05d", i);
    const fs::path clip_dir = dir / name;
    fs::create_directories(clip_dir);
    for (int t = 0; t < frames; ++t) write_ppm(frame_path(clip_dir, t), synthetic_frame(seed, i, resolution, t));
    ClipEntry e;
    e.path = name;
    e.frames = frames;
    e.width = resolution;
    e.height = resolution;
    e.split = i >= n_clips - heldout ? "heldout" : "train";
    e.velocity = synthetic_velocity(seed, i);
    m.clips.push_back(std::move(e));
  }
  m.save(dir / "manifest.json");
  return m;
}

Image frame_to_image(const VideoTensor& v, int64_t t) {
  const int64_t h = v.height(), w = v.width();
  Image img{w, h, std::vector<uint8_t>(static_cast<std::size_t>(w * h * 3))};
  const float* src = v.data.data() + t * h * w * 3;
  for (int64_t i = 0; i < h * w * 3; ++i) {
    const double x = (static_cast<double>(src[i]) + 1.0) * 127.5;
    img.rgb[static_cast<std::size_t>(i)] = static_cast<uint8_t>(std::clamp(std::lround(x), 0L, 255L));
  }
  return img;
}

void write_clip_frames(const fs::path& dir, const VideoTensor& v) {
  fs::create_directories(dir);
  for (int64_t t = 0; t < v.frames(); ++t) write_ppm(frame_path(dir, t), frame_to_image(v, t));
}

}  // namespace cdt
