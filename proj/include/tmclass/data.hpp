#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tmclass/taxonomy.hpp"

namespace tmclass {

/// One utterance: per-layer averaged embeddings X_c (C x L) and the final-layer vector x1.
struct FeatureRecord {
    std::optional<std::uint32_t> label;
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> condition_stack;
    Eigen::VectorXf terminal;
};

struct DatasetHeader {
    std::uint32_t dim = 0;               // L
    std::uint32_t num_condition_layers = 0;  // C
    std::vector<std::string> labels;     // taxonomy manifest, B entries
};

class FeatureDataset {
public:
    FeatureDataset(DatasetHeader header, std::vector<FeatureRecord> records);

    const DatasetHeader& header() const noexcept { return header_; }
    std::size_t dim() const noexcept { return header_.dim; }
    std::size_t num_condition_layers() const noexcept { return header_.num_condition_layers; }
    std::size_t num_classes() const noexcept { return header_.labels.size(); }
    ClassTaxonomy taxonomy() const { return ClassTaxonomy(header_.labels); }

    const std::vector<FeatureRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    const FeatureRecord& operator[](std::size_t i) const { return records_[i]; }

    /// Per-class record counts (unlabeled records are not counted).
    std::vector<std::size_t> class_counts() const;
    bool fully_labeled() const;

    /// Dataset holding the records at `indices`, in that order.
    FeatureDataset subset(const std::vector<std::size_t>& indices) const;

private:
    DatasetHeader header_;
    std::vector<FeatureRecord> records_;
};

/// True when both datasets have identical headers and bit-identical record values.
bool bitwise_equal(const FeatureDataset& a, const FeatureDataset& b);

// "GSF1" binary feature file.
//   magic "GSF1"
//   u32 version (1), u32 record count, u32 C, u32 L, u32 B       little-endian
//   B x (u32 byte length, UTF-8 label bytes)
//   per record: u32 label (0xFFFFFFFF = unlabeled), C*L f32 (layer-major), L f32
inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;

void write_dataset(const FeatureDataset& dataset, std::ostream& out);
void write_dataset(const FeatureDataset& dataset, const std::filesystem::path& path);
FeatureDataset read_dataset(std::istream& in);
FeatureDataset read_dataset(const std::filesystem::path& path);

struct SyntheticSpec {
    std::vector<std::string> labels;   // empty -> "class0", "class1", ...
    std::size_t num_classes = 4;
    std::size_t dim = 64;
    std::size_t num_condition_layers = 3;
    /// Per-coordinate std of the randomly drawn class means. Ignored when class_means is set.
    double separation = 0.25;
    std::vector<Eigen::VectorXd> class_means;
    double within_class_std = 0.05;
    std::size_t samples_per_class = 500;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Class-c terminal vectors are mean_c + N(0, std^2) per coordinate; each condition
/// layer is the terminal vector plus independent N(0, std^2) noise.
FeatureDataset generate_synthetic(const SyntheticSpec& spec);

struct SplitFractions {
    double train = 0.7;
    double validation = 0.15;
    double test = 0.15;
};

struct DatasetSplit {
    FeatureDataset train;
    FeatureDataset validation;
    FeatureDataset test;
};

/// Label-stratified, deterministic split. Every record lands in exactly one part.
DatasetSplit split(const FeatureDataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

/// Header and per-class counts, human-readable.
std::string summarize(const FeatureDataset& dataset);

}  // namespace tmclass
