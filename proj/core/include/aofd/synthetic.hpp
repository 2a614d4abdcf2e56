#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aofd/geometry.hpp"
#include "aofd/image.hpp"

namespace aofd {

// Occlusion categories: facial landmark occlusion (glasses, gauze masks),
// occlusion by another face, occlusion by an object, or none.
enum class OcclusionCategory { kLandmark, kFaceOverFace, kObject, kNone };

const char* to_string(OcclusionCategory category);

struct OcclusionMix {
  double landmark = 0.25;
  double face_over_face = 0.25;
  double object = 0.25;
  double none = 0.25;

  void validate() const;
};

// Labelling thresholds, applied to the renderer's own z-buffer.
inline constexpr double kMaskedCoverage = 0.20;   // masked iff coverage > this
inline constexpr double kIgnoredCoverage = 0.85;  // ignored iff coverage >= this
inline constexpr double kIgnoredFaceSize = 20.0;  // ignored iff short side < this

struct SceneSpec {
  int width = 128;
  int height = 128;
  int min_faces = 1;
  int max_faces = 3;
  double min_face_size = 16.0;  // face width range in pixels
  double max_face_size = 72.0;
  OcclusionMix mix;
  double noise = 10.0;        // uniform per-channel pixel noise amplitude
  int clutter = 5;            // maximum distractor shapes in the background
  double heavy_object_probability = 0.1;  // object occluders hiding >= 85%
  int max_attempts = 200;     // placement retries per face

  void validate() const;
};

// A rendered scene plus the renderer-internal bookkeeping that tests use as an
// oracle. Vectors indexed per annotation share the annotation order.
struct Scene {
  RgbImage image;
  std::vector<Annotation> annotations;
  GrayImage occlusion_mask;  // 255 on occluder pixels inside masked face boxes

  std::vector<OcclusionCategory> categories;
  std::vector<double> coverage;          // hidden fraction of each face ellipse
  std::vector<int> face_layer;           // z-order layer of each face
  std::vector<GrayImage> face_occluders;  // mask pixels attributed to each face
  std::vector<int> owner;                // topmost layer per pixel (0 = background)
};

// Deterministic in (spec, seed). Throws InvalidArgument when `min_faces`
// faces cannot be placed within the retry budget.
Scene render_scene(const SceneSpec& spec, std::uint64_t seed);

struct DatasetRecord {
  std::string image_file;  // relative to the dataset root
  std::string mask_file;
  std::vector<Annotation> annotations;
  std::string split;

  bool operator==(const DatasetRecord&) const = default;
};

struct Sample {
  DatasetRecord record;
  RgbImage image;
  GrayImage mask;
};

// Layout: <root>/images/*.ppm, <root>/masks/*.pgm and <root>/annotations.jsonl
// with one JSON record per line. With `export_index` set a single
// <root>/index.json listing images and annotations is written as well.
void write_dataset(std::span<const Sample> samples, const std::filesystem::path& root,
                   bool export_index = false);

// Missing root or missing annotations file yields an empty list. Malformed
// lines raise DataError with the line number; masked annotations whose mask
// file is absent raise DataError naming the file.
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& root);

Sample load_sample(const std::filesystem::path& root, const DatasetRecord& record);

struct BenchmarkSpec {
  std::uint64_t seed = 2018;
  int train_size = 500;
  int val_size = 100;
  int test_size = 100;
  int segmentation_size = 300;
  SceneSpec train_scene;
  SceneSpec test_scene;
  SceneSpec segmentation_scene;

  BenchmarkSpec();
  void validate() const;
};

struct Benchmark {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::vector<Sample> segmentation;
};

// Seeded, disjoint splits. Every test image has at least as many masked faces
// as other faces, so the test split is at least half masked; every
// segmentation image has a masked face.
Benchmark make_benchmark(const BenchmarkSpec& spec);

// Acceptance rule for rendered images of a split.
enum class SplitRule {
  kAny,
  kMajorityMasked,  // masked faces >= other faces, at least one masked
  kAnyMasked,
};

// Renders one split's samples; `stream` keeps seeds disjoint across splits.
// Rejected renders are redrawn with the next attempt seed.
std::vector<Sample> render_split(const SceneSpec& scene, std::uint64_t seed,
                                 std::uint64_t stream, int count,
                                 const std::string& split, SplitRule rule);

// Hex digest of image bytes, used to check split disjointness.
std::string content_hash(const RgbImage& image);

}  // namespace aofd
