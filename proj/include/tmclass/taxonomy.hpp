#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace tmclass {

/// Ordered, distinct class labels. The ordinal of a label is its position in the list.
class ClassTaxonomy {
public:
    explicit ClassTaxonomy(std::vector<std::string> labels);

    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::string& label(std::size_t index) const { return labels_.at(index); }
    std::size_t index_of(const std::string& label) const;
    bool contains(const std::string& label) const { return index_.count(label) != 0; }

    friend bool operator==(const ClassTaxonomy& a, const ClassTaxonomy& b) {
        return a.labels_ == b.labels_;
    }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Sinusoidal codeword for class ordinal `index`:
/// element l = sin(2*pi*l/dim * (index + 1)), l = 0..dim-1.
/// Requires dim >= 4 and index + 1 < dim / 2.
Eigen::VectorXd encode_class(std::size_t index, std::size_t dim);

/// B x L matrix of codewords, row b = encode_class(b, L). Immutable.
class TaxonomyCodebook {
public:
    TaxonomyCodebook(ClassTaxonomy taxonomy, std::size_t dim);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_classes() const noexcept { return taxonomy_.size(); }
    const ClassTaxonomy& taxonomy() const noexcept { return taxonomy_; }
    const Eigen::MatrixXd& codewords() const noexcept { return codewords_; }
    Eigen::VectorXd codeword(std::size_t index) const { return codewords_.row(index).transpose(); }

    /// JSON manifest: {"dim", "labels", "checksums"}. Codewords are never stored;
    /// checksums are FNV-1a 64 of each codeword's little-endian float64 bytes.
    std::string manifest_json() const;
    static TaxonomyCodebook from_manifest_json(const std::string& text);

private:
    ClassTaxonomy taxonomy_;
    std::size_t dim_;
    Eigen::MatrixXd codewords_;
};

TaxonomyCodebook build_codebook(const ClassTaxonomy& taxonomy, std::size_t dim);

struct Classification {
    std::size_t predicted = 0;
    std::vector<double> scores;  // cosine similarity per class
};

/// Cosine-similarity argmax against the codebook. Ties go to the lowest index.
Classification classify(const Eigen::Ref<const Eigen::VectorXd>& estimate,
                        const TaxonomyCodebook& codebook);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace tmclass
