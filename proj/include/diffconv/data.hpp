#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffconv/core.hpp"

namespace diffconv {

struct TriangleMesh {
  Matrix vertices;  // V x 3
  std::vector<std::array<int, 3>> faces;
  int num_vertices() const { return vertices.rows; }
  int num_faces() const { return static_cast<int>(faces.size()); }
};

// OFF mesh I/O. Tolerates the fused-header quirk ("OFF490 244 0") and
// fan-triangulates polygonal faces; malformed input raises ParseError
// carrying the offending line number.
TriangleMesh parse_off(std::istream& in);
TriangleMesh parse_off_file(const std::string& path);
void write_off(std::ostream& out, const TriangleMesh& mesh);
void write_off_file(const std::string& path, const TriangleMesh& mesh);

// Area-weighted uniform sampling over mesh faces.
PointCloud sample_surface(const TriangleMesh& mesh, int n, std::uint64_t seed);

// Centroid to origin, max norm scaled to 1.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Random translation (uniform per axis in [-magnitude, magnitude]) plus an
// index shuffle; preserves the point multiset and all pairwise distances.
PointCloud augment(const PointCloud& cloud, std::uint64_t seed, real_t magnitude = real_t(0.2));

// Appends m points drawn uniformly from [-1,1]^3.
PointCloud inject_noise(const PointCloud& cloud, int m, std::uint64_t seed);

// Canonical shape samplers (surface-uniform, centered at the origin).
PointCloud sample_sphere(int n, std::mt19937_64& rng);           // radius 1
PointCloud sample_cube(int n, std::mt19937_64& rng);             // side 2
PointCloud sample_torus(int n, std::mt19937_64& rng);            // R = 1, r = 0.4
inline constexpr std::array<const char*, 3> kSyntheticClassNames{"sphere", "cube", "torus"};

// Generator spec "synth:<shape>:<points>:<seed>": the named shape with a
// per-instance random rotation and +-10% scale jitter. Not normalized.
PointCloud generate_cloud(const std::string& spec);

struct DatasetEntry {
  std::string source;  // file path or generator spec
  int label = 0;
};

struct DatasetSplit {
  std::vector<DatasetEntry> train, val, test;
  std::vector<std::string> class_names;
};

// Seeded shuffle, then 15% test, 15% val (both rounded to nearest), rest train.
DatasetSplit resampled_split(std::vector<DatasetEntry> all, std::uint64_t seed);

// Three-class synthetic corpus (sphere/cube/torus), n_per_class instances
// each, resampled into 70/15/15.
DatasetSplit synthetic_dataset(int n_per_class, int points_per_cloud, std::uint64_t seed);

// Directly generated, normalized labeled clouds; class c occupies indices
// [c*n_per_class, (c+1)*n_per_class).
LabeledClouds synthetic_clouds(int n_per_class, int points_per_cloud, std::uint64_t seed);

// Loads entries into memory: generator specs are evaluated, file paths are
// parsed as OFF and surface-sampled with points_per_cloud points. Every
// cloud is normalized into the unit sphere.
LabeledClouds materialize(std::span<const DatasetEntry> entries, int points_per_cloud, std::uint64_t seed);

// Point-cloud text format: "PCD-TXT v1 N d" header, then N lines of three
// coordinates followed by d feature values.
void write_pcd(std::ostream& out, const PointCloud& cloud, const Matrix& features);
void write_pcd_file(const std::string& path, const PointCloud& cloud, const Matrix& features);
std::pair<PointCloud, Matrix> read_pcd(std::istream& in);
std::pair<PointCloud, Matrix> read_pcd_file(const std::string& path);

// CSV manifest "relative_path,class_name" (one entry per line).
void write_manifest(std::ostream& out, std::span<const std::pair<std::string, std::string>> rows);
std::vector<std::pair<std::string, std::string>> read_manifest(std::istream& in);

}  // namespace diffconv
