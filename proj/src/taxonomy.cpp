#include "tmclass/taxonomy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>

#include <nlohmann/json.hpp>

#include "tmclass/errors.hpp"

namespace tmclass {

ClassTaxonomy::ClassTaxonomy(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) {
        throw InvalidArgument("taxonomy needs at least 2 classes, got " + std::to_string(labels_.size()));
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i].empty()) {
            throw InvalidArgument("taxonomy label " + std::to_string(i) + " is empty");
        }
        if (!index_.emplace(labels_[i], i).second) {
            throw InvalidArgument("duplicate taxonomy label '" + labels_[i] + "'");
        }
    }
}

std::size_t ClassTaxonomy::index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) {
        throw InvalidArgument("unknown class label '" + label + "'");
    }
    return it->second;
}

Eigen::VectorXd encode_class(std::size_t index, std::size_t dim) {
    if (dim < 4) {
        throw InvalidArgument("codeword dim must be >= 4, got " + std::to_string(dim));
    }
    // index + 1 < dim / 2, kept in integers: 2 * (index + 1) < dim
    if (2 * (index + 1) >= dim) {
        throw DimensionTooSmall("class index " + std::to_string(index) + " needs index + 1 < dim/2 (dim " +
                                std::to_string(dim) + ")");
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim));
    const double freq = static_cast<double>(index + 1);
    for (std::size_t l = 0; l < dim; ++l) {
        out[static_cast<Eigen::Index>(l)] =
            std::sin(2.0 * std::numbers::pi * static_cast<double>(l) / static_cast<double>(dim) * freq);
    }
    return out;
}

TaxonomyCodebook::TaxonomyCodebook(ClassTaxonomy taxonomy, std::size_t dim)
    : taxonomy_(std::move(taxonomy)), dim_(dim) {
    const std::size_t classes = taxonomy_.size();
    if (dim < 4 || 2 * classes >= dim) {
        throw DimensionTooSmall("codebook of " + std::to_string(classes) + " classes needs B < L/2, got L = " +
                                std::to_string(dim));
    }
    codewords_.resize(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
    for (std::size_t b = 0; b < classes; ++b) {
        codewords_.row(static_cast<Eigen::Index>(b)) = encode_class(b, dim).transpose();
    }
}

TaxonomyCodebook build_codebook(const ClassTaxonomy& taxonomy, std::size_t dim) {
    return TaxonomyCodebook(taxonomy, dim);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::uint64_t codeword_checksum(const Eigen::VectorXd& v) {
    static_assert(std::endian::native == std::endian::little, "checksums assume a little-endian host");
    return fnv1a64(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
}

std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

}  // namespace

std::string TaxonomyCodebook::manifest_json() const {
    nlohmann::json j;
    j["dim"] = dim_;
    j["labels"] = taxonomy_.labels();
    auto sums = nlohmann::json::array();
    for (std::size_t b = 0; b < num_classes(); ++b) sums.push_back(hex64(codeword_checksum(codeword(b))));
    j["checksums"] = sums;
    return j.dump(2);
}

TaxonomyCodebook TaxonomyCodebook::from_manifest_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(std::string("codebook manifest is not valid JSON: ") + e.what());
    }
    if (!j.contains("dim") || !j.contains("labels")) {
        throw InvalidArgument("codebook manifest needs 'dim' and 'labels'");
    }
    TaxonomyCodebook cb(ClassTaxonomy(j.at("labels").get<std::vector<std::string>>()),
                        j.at("dim").get<std::size_t>());
    if (j.contains("checksums")) {
        const auto sums = j.at("checksums").get<std::vector<std::string>>();
        if (sums.size() != cb.num_classes()) {
            throw InvalidArgument("codebook manifest has " + std::to_string(sums.size()) + " checksums for " +
                                  std::to_string(cb.num_classes()) + " labels");
        }
        for (std::size_t b = 0; b < sums.size(); ++b) {
            if (sums[b] != hex64(codeword_checksum(cb.codeword(b)))) {
                throw InvalidArgument("codeword checksum mismatch for label '" + cb.taxonomy().label(b) + "'");
            }
        }
    }
    return cb;
}

Classification classify(const Eigen::Ref<const Eigen::VectorXd>& estimate, const TaxonomyCodebook& codebook) {
    if (static_cast<std::size_t>(estimate.size()) != codebook.dim()) {
        throw InvalidArgument("estimate has length " + std::to_string(estimate.size()) + ", codebook dim is " +
                              std::to_string(codebook.dim()));
    }
    const double norm = estimate.norm();
    if (!std::isfinite(norm)) {
        throw NumericError("estimate contains non-finite values");
    }
    if (norm == 0.0) {
        throw DegenerateInput("cannot classify a zero-norm estimate");
    }
    Classification out;
    out.scores.resize(codebook.num_classes());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < codebook.num_classes(); ++b) {
        const auto row = codebook.codewords().row(static_cast<Eigen::Index>(b));
        const double score = row.dot(estimate) / (norm * row.norm());
        out.scores[b] = score;
        if (score > best) {  // strict: earlier index keeps ties
            best = score;
            out.predicted = b;
        }
    }
    return out;
}

}  // namespace tmclass
