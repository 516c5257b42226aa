#include "calikd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "calikd/digest.hpp"
#include "calikd/error.hpp"
#include "calikd/rng.hpp"

namespace calikd::data {

using nlohmann::json;

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::validation: return "validation";
    case SplitTag::test: return "test";
  }
  return "?";
}

void Dataset::validate() const {
  if (size() == 0) throw ValidationError("dataset is empty");
  if (class_count < 2) {
    throw ValidationError("dataset class count must be at least 2, got " +
                          std::to_string(class_count));
  }
  if (!features.all_finite()) throw ValidationError("dataset features are non-finite");
  if (labels.size() != size()) {
    throw ValidationError("dataset has " + std::to_string(size()) + " rows but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
  }
}

void SyntheticSpec::validate() const {
  if (class_count < 2) throw ConfigError("synthetic: class_count must be at least 2");
  if (dims < 1) throw ConfigError("synthetic: dims must be positive");
  if (clusters_per_class < 1) {
    throw ConfigError("synthetic: clusters_per_class must be positive");
  }
  if (!(cluster_spread > 0.0)) throw ConfigError("synthetic: cluster_spread must be positive");
  if (!(label_noise_rate >= 0.0 && label_noise_rate < 0.5)) {
    throw ConfigError("synthetic: label_noise_rate must lie in [0, 0.5)");
  }
  if (samples < 1) throw ConfigError("synthetic: samples must be positive");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Pcg32 rng(spec.seed, rng_stream::kData);

  const auto k = static_cast<std::size_t>(spec.class_count);
  const auto cpc = static_cast<std::size_t>(spec.clusters_per_class);
  const auto d = static_cast<std::size_t>(spec.dims);

  // cluster centers at unit-Gaussian positions, then points around them
  Matrix centers(k * cpc, d);
  for (double& v : centers.data()) v = rng.next_gaussian();

  Dataset out;
  out.features = Matrix(spec.samples, d);
  out.labels.resize(spec.samples);
  out.class_count = spec.class_count;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t cls = rng.next_below(static_cast<std::uint32_t>(k));
    const std::size_t cluster = rng.next_below(static_cast<std::uint32_t>(cpc));
    const auto center = centers.row(cls * cpc + cluster);
    auto row = out.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = center[j] + spec.cluster_spread * rng.next_gaussian();
    }
    out.labels[i] = static_cast<int>(cls);
  }

  std::size_t flips = 0;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    if (rng.next_double() < spec.label_noise_rate) {
      auto other = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(k - 1)));
      if (other >= out.labels[i]) ++other;  // uniform over the other classes
      out.labels[i] = other;
      ++flips;
    }
  }

  out.split_tag = SplitTag::train;
  out.provenance.generator = "synthetic-gaussian-v1";
  out.provenance.seed = spec.seed;
  out.provenance.parameters = json{{"class_count", spec.class_count},
                                   {"dims", spec.dims},
                                   {"clusters_per_class", spec.clusters_per_class},
                                   {"cluster_spread", spec.cluster_spread},
                                   {"label_noise_rate", spec.label_noise_rate},
                                   {"samples", spec.samples},
                                   {"seed", spec.seed},
                                   {"label_noise_flips", flips}}
                                  .dump();
  return out;
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

IdxContent parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX data shorter than the 4-byte magic");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic == kIdxImagesMagic) {
    if (bytes.size() < 16) throw FormatError("IDX image header truncated");
    const std::uint64_t count = read_be32(bytes, 4);
    const std::uint64_t rows = read_be32(bytes, 8);
    const std::uint64_t cols = read_be32(bytes, 12);
    if (count == 0 || rows == 0 || cols == 0) {
      throw FormatError("IDX image dimensions must be positive, got " +
                        std::to_string(count) + "x" + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
    const std::uint64_t declared = count * rows * cols;
    const std::uint64_t payload = bytes.size() - 16;
    if (declared != payload) {
      throw TruncationError("IDX image payload is " + std::to_string(payload) +
                            " bytes, header declares " + std::to_string(declared));
    }
    IdxImages images;
    images.features = Matrix(count, rows * cols);
    const std::uint8_t* pixel = bytes.data() + 16;
    for (double& v : images.features.data()) {
      v = static_cast<double>(*pixel++) / 255.0;
    }
    return images;
  }
  if (magic == kIdxLabelsMagic) {
    if (bytes.size() < 8) throw FormatError("IDX label header truncated");
    const std::uint64_t count = read_be32(bytes, 4);
    if (count == 0) throw FormatError("IDX label count must be positive");
    const std::uint64_t payload = bytes.size() - 8;
    if (count != payload) {
      throw TruncationError("IDX label payload is " + std::to_string(payload) +
                            " bytes, header declares " + std::to_string(count));
    }
    IdxLabels labels;
    labels.labels.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      labels.labels.push_back(static_cast<int>(bytes[8 + i]));
    }
    return labels;
  }
  throw FormatError("unrecognized IDX magic " + hex32(magic) +
                    " (expected 0x00000803 images or 0x00000801 labels)");
}

namespace {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path,
                         std::size_t subset, int class_count) {
  const auto image_bytes = read_file_bytes(images_path);
  const auto label_bytes = read_file_bytes(labels_path);

  auto images = std::get<IdxImages>(
      [&]() -> IdxContent {
        auto content = parse_idx(image_bytes);
        if (!std::holds_alternative<IdxImages>(content)) {
          throw FormatError(images_path.string() + " holds labels, expected images");
        }
        return content;
      }());
  auto labels = std::get<IdxLabels>(
      [&]() -> IdxContent {
        auto content = parse_idx(label_bytes);
        if (!std::holds_alternative<IdxLabels>(content)) {
          throw FormatError(labels_path.string() + " holds images, expected labels");
        }
        return content;
      }());

  if (images.features.rows() != labels.labels.size()) {
    throw ValidationError("IDX pair mismatch: " + std::to_string(images.features.rows()) +
                          " images vs " + std::to_string(labels.labels.size()) +
                          " labels");
  }

  Dataset out;
  std::size_t n = images.features.rows();
  if (subset > 0 && subset < n) n = subset;
  std::vector<std::size_t> head(n);
  std::iota(head.begin(), head.end(), 0);
  out.features = gather_rows(images.features, head);
  out.labels.assign(labels.labels.begin(), labels.labels.begin() + static_cast<long>(n));

  if (class_count == 0) {
    const int max_label = *std::max_element(labels.labels.begin(), labels.labels.end());
    class_count = max_label + 1;
  }
  out.class_count = std::max(class_count, 2);
  out.split_tag = SplitTag::train;
  out.provenance.generator = "idx";
  out.provenance.seed = 0;
  out.provenance.source_digest =
      "images:" +
      fnv1a64_hex({reinterpret_cast<const char*>(image_bytes.data()), image_bytes.size()}) +
      ";labels:" +
      fnv1a64_hex({reinterpret_cast<const char*>(label_bytes.data()), label_bytes.size()});
  out.provenance.parameters = json{{"images", images_path.string()},
                                   {"labels", labels_path.string()},
                                   {"subset", subset},
                                   {"class_count", out.class_count}}
                                  .dump();
  out.validate();
  return out;
}

std::array<Dataset, 3> split(const Dataset& dataset, const SplitFractions& fractions,
                             std::uint64_t seed) {
  dataset.validate();
  if (!(fractions.train > 0.0 && fractions.validation > 0.0 && fractions.test > 0.0)) {
    throw ConfigError("split fractions must be positive");
  }
  const double total = fractions.train + fractions.validation + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions sum to " + std::to_string(total) +
                      ", expected 1");
  }

  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Pcg32 rng(seed, rng_stream::kSplit);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.next_below(static_cast<std::uint32_t>(i + 1));
    std::swap(order[i], order[j]);
  }

  const auto cut1 = static_cast<std::size_t>(
      std::llround(fractions.train * static_cast<double>(n)));
  const auto cut2 = static_cast<std::size_t>(
      std::llround((fractions.train + fractions.validation) * static_cast<double>(n)));
  const std::size_t sizes[3] = {cut1, cut2 - cut1, n - cut2};
  for (int s = 0; s < 3; ++s) {
    if (sizes[s] == 0 || cut1 > n || cut2 > n || cut1 > cut2) {
      throw ConfigError("split leaves the " +
                        std::string(to_string(static_cast<SplitTag>(s))) +
                        " split empty (n=" + std::to_string(n) + ")");
    }
  }

  std::array<Dataset, 3> out;
  const std::size_t offsets[3] = {0, cut1, cut2};
  for (int s = 0; s < 3; ++s) {
    const std::span<const std::size_t> indices(order.data() + offsets[s], sizes[s]);
    Dataset& part = out[static_cast<std::size_t>(s)];
    part.features = gather_rows(dataset.features, indices);
    part.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      part.labels[i] = dataset.labels[indices[i]];
    }
    part.class_count = dataset.class_count;
    part.split_tag = static_cast<SplitTag>(s);
    part.provenance.generator = dataset.provenance.generator;
    part.provenance.seed = dataset.provenance.seed;
    part.provenance.source_digest = dataset.provenance.source_digest;
    part.provenance.parameters = json{{"split", to_string(static_cast<SplitTag>(s))},
                                      {"split_seed", seed},
                                      {"fractions",
                                       {fractions.train, fractions.validation,
                                        fractions.test}},
                                      {"parent", dataset.provenance.parameters}}
                                     .dump();
  }
  return out;
}

void write_logits(const std::filesystem::path& path, const calibration::LogitSet& set) {
  set.validate();
  std::ostringstream out;
  out << "label";
  for (std::size_t k = 0; k < set.class_count(); ++k) out << ",z" << k;
  out << "\n";
  char buf[40];
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.labels[i];
    for (const double v : set.logits.row(i)) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out << ',' << buf;
    }
    out << "\n";
  }

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw ConfigError("cannot write file: " + tmp.string());
    file << out.str();
    if (!file.good()) throw ConfigError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double_field(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": cannot parse value '" +
                      std::string(field) + "'");
  }
  return value;
}

}  // namespace

calibration::LogitSet read_logits(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw FormatError("logits file is empty: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "label") {
    throw FormatError("line 1: expected header label,z0,...,z{K-1}");
  }
  const std::size_t k = header.size() - 1;
  for (std::size_t c = 0; c < k; ++c) {
    if (header[c + 1] != "z" + std::to_string(c)) {
      throw FormatError("line 1: expected header column z" + std::to_string(c) +
                        ", got '" + std::string(header[c + 1]) + "'");
    }
  }

  std::vector<int> labels;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != k + 1) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(k + 1) + " columns, got " +
                        std::to_string(fields.size()));
    }
    int label = 0;
    const auto [ptr, ec] =
        std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
    if (ec != std::errc{} || ptr != fields[0].data() + fields[0].size()) {
      throw FormatError("line " + std::to_string(line_no) + ": cannot parse label '" +
                        std::string(fields[0]) + "'");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ValidationError("line " + std::to_string(line_no) + ": label " +
                            std::to_string(label) + " outside [0, " + std::to_string(k) +
                            ")");
    }
    labels.push_back(label);
    for (std::size_t c = 0; c < k; ++c) {
      values.push_back(parse_double_field(fields[c + 1], line_no));
    }
  }
  if (labels.empty()) throw FormatError("logits file has no data rows: " + path.string());

  calibration::LogitSet set;
  set.logits = Matrix(labels.size(), k);
  set.logits.data() = std::move(values);
  set.labels = std::move(labels);
  set.validate();
  return set;
}

}  // namespace calikd::data
