#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cdt/video.hpp"

namespace cdt {

// TensorContainer layout (little-endian):
//   "CDT1" | u32 version | u32 dtype (1 = f32) | u32 rank | u64 dims[rank] | f32 payload
inline constexpr char kContainerMagic[4] = {'C', 'D', 'T', '1'};
inline constexpr uint32_t kContainerVersion = 1;
inline constexpr uint32_t kDtypeF32 = 1;

void write_tensor(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& in, const std::string& what = "stream");
void write_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::filesystem::path& path);

struct Image {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> rgb;  ///< row-major, 3 bytes per pixel
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

struct ClipEntry {
  std::string path;  ///< frame directory, relative to the manifest
  int64_t frames = 0;
  int64_t width = 0;
  int64_t height = 0;
  std::string split = "train";
  /// Per-frame displacement (dx, dy) in pixels; synthetic clips only.
  std::array<int, 2> velocity{0, 0};
};

struct PreprocessSpec {
  int64_t resize = 0;  ///< target short side before cropping; 0 means the crop size
  int64_t crop = 64;
  int64_t frames = 17;
};

struct DatasetManifest {
  std::filesystem::path root;  ///< directory the clip paths are relative to
  std::vector<ClipEntry> clips;
  PreprocessSpec spec;

  std::vector<ClipEntry> split(const std::string& tag) const;
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

std::filesystem::path frame_path(const std::filesystem::path& clip_dir, int64_t index);

/// Bilinear resize of the short side, centre crop, first spec.frames frames,
/// then x / 127.5 - 1.
VideoTensor load_clip(const std::filesystem::path& root, const ClipEntry& entry, const PreprocessSpec& spec);
VideoTensor load_clip(const DatasetManifest& manifest, const ClipEntry& entry);

/// Bilinear resize with half-pixel centres on 8-bit RGB.
Image resize_bilinear(const Image& src, int64_t width, int64_t height);

/// Writes clip frames and the manifest (manifest.json) into dir. Each clip is
/// a periodic textured background plus squares, all translating by an
/// integer velocity per frame with wrap-around. The last heldout clips are
/// tagged "heldout", the rest "train".
DatasetManifest make_synthetic_dataset(const std::filesystem::path& dir, uint64_t seed, int n_clips, int resolution,
                                       int frames, int heldout = 0);

/// Frame t of synthetic clip `clip` generated from `seed`.
Image synthetic_frame(uint64_t seed, int clip, int resolution, int t);
std::array<int, 2> synthetic_velocity(uint64_t seed, int clip);

/// [-1, 1] video frame -> 8-bit image (rounded, clamped).
Image frame_to_image(const VideoTensor& v, int64_t t);
void write_clip_frames(const std::filesystem::path& dir, const VideoTensor& v);

}  // namespace cdt
