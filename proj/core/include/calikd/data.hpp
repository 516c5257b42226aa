#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calikd/calibration.hpp"
#include "calikd/matrix.hpp"

namespace calikd::data {

enum class SplitTag { train, validation, test };

const char* to_string(SplitTag tag);

/// How a dataset came to be: generator name plus either the generator
/// parameters or the source file digests.
struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  std::string parameters;     // JSON text, generator-specific
  std::string source_digest;  // for file-backed datasets

  bool operator==(const Provenance&) const = default;
};

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // values in [0, class_count)
  int class_count = 0;
  SplitTag split_tag = SplitTag::train;
  Provenance provenance;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Seeded Gaussian-cluster classification data. Label noise flips a fraction
/// of labels to a uniformly random different class, which makes teacher
/// overconfidence measurable.
struct SyntheticSpec {
  int class_count = 8;
  int dims = 16;
  int clusters_per_class = 2;
  double cluster_spread = 1.0;
  double label_noise_rate = 0.0;  // in [0, 0.5)
  std::size_t samples = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// One half of an IDX file: flattened image rows scaled to [0, 1], or labels.
struct IdxImages {
  Matrix features;
};
struct IdxLabels {
  std::vector<int> labels;
};
using IdxContent = std::variant<IdxImages, IdxLabels>;

/// Parse a big-endian IDX payload. Magic 0x00000803 (u8, 3 dims) yields
/// images, 0x00000801 (u8, 1 dim) yields labels. Other magics are
/// FormatError; declared-size/payload mismatches are TruncationError.
IdxContent parse_idx(std::span<const std::uint8_t> bytes);

/// Load an images/labels IDX file pair into a dataset. `subset` keeps only
/// the first `subset` samples when nonzero. `class_count` of 0 derives K
/// from the labels.
Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path,
                         std::size_t subset = 0, int class_count = 0);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

/// Seeded permutation followed by contiguous cuts. The three index sets
/// partition the input exactly; any empty split is a ConfigError.
std::array<Dataset, 3> split(const Dataset& dataset, const SplitFractions& fractions,
                             std::uint64_t seed);

/// Logits interchange file: CSV with header `label,z0,...,z{K-1}`, one row
/// per sample, logits written with 9 significant digits. Writes are atomic
/// (temp file + rename).
void write_logits(const std::filesystem::path& path, const calibration::LogitSet& set);
calibration::LogitSet read_logits(const std::filesystem::path& path);

}  // namespace calikd::data
