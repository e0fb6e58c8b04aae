#include "tmclass/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "tmclass/errors.hpp"

namespace tmclass {

FeatureDataset::FeatureDataset(DatasetHeader header, std::vector<FeatureRecord> records)
    : header_(std::move(header)), records_(std::move(records)) {
    if (header_.dim == 0) throw InvalidArgument("dataset dim must be > 0");
    if (header_.num_condition_layers == 0) throw InvalidArgument("dataset needs at least one condition layer");
    const auto L = static_cast<Eigen::Index>(header_.dim);
    const auto C = static_cast<Eigen::Index>(header_.num_condition_layers);
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.terminal.size() != L || r.condition_stack.rows() != C || r.condition_stack.cols() != L) {
            throw InvalidArgument("record " + std::to_string(i) + " dims do not match the dataset header");
        }
        if (r.label && *r.label >= header_.labels.size()) {
            throw InvalidArgument("record " + std::to_string(i) + " label " + std::to_string(*r.label) +
                                  " out of range for " + std::to_string(header_.labels.size()) + " classes");
        }
        if (!r.terminal.allFinite() || !r.condition_stack.allFinite()) {
            throw InvalidArgument("record " + std::to_string(i) + " contains non-finite values");
        }
    }
}

std::vector<std::size_t> FeatureDataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes(), 0);
    for (const auto& r : records_) {
        if (r.label) ++counts[*r.label];
    }
    return counts;
}

bool FeatureDataset::fully_labeled() const {
    return std::all_of(records_.begin(), records_.end(), [](const FeatureRecord& r) { return r.label.has_value(); });
}

FeatureDataset FeatureDataset::subset(const std::vector<std::size_t>& indices) const {
    std::vector<FeatureRecord> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records_.at(i));
    return FeatureDataset(header_, std::move(out));
}

bool bitwise_equal(const FeatureDataset& a, const FeatureDataset& b) {
    const auto& ha = a.header();
    const auto& hb = b.header();
    if (ha.dim != hb.dim || ha.num_condition_layers != hb.num_condition_layers || ha.labels != hb.labels ||
        a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& ra = a[i];
        const auto& rb = b[i];
        if (ra.label != rb.label) return false;
        if (std::memcmp(ra.terminal.data(), rb.terminal.data(), sizeof(float) * ra.terminal.size()) != 0) return false;
        if (std::memcmp(ra.condition_stack.data(), rb.condition_stack.data(),
                        sizeof(float) * ra.condition_stack.size()) != 0) {
            return false;
        }
    }
    return true;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(b.data(), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFEu) throw InvalidArgument(std::string(what) + " does not fit the feature file format");
    return static_cast<std::uint32_t>(v);
}

// Sequential little-endian reader that tracks the byte offset for error messages.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::uint64_t offset() const { return offset_; }

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(in_.gcount());
        if (got != n) {
            throw FormatError(std::string("truncated file while reading ") + what, offset_ + got);
        }
        offset_ += n;
    }

    std::uint32_t u32(const char* what) {
        std::array<unsigned char, 4> b{};
        bytes(reinterpret_cast<char*>(b.data()), 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float f32(const char* what) {
        const std::uint64_t at = offset_;
        const float f = std::bit_cast<float>(u32(what));
        if (!std::isfinite(f)) throw FormatError(std::string("non-finite value in ") + what, at);
        return f;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
    std::uint64_t offset_ = 0;
};

}  // namespace

void write_dataset(const FeatureDataset& dataset, std::ostream& out) {
    const auto& h = dataset.header();
    out.write("GSF1", 4);
    put_u32(out, kFeatureFormatVersion);
    put_u32(out, checked_u32(dataset.size(), "record count"));
    put_u32(out, h.num_condition_layers);
    put_u32(out, h.dim);
    put_u32(out, checked_u32(h.labels.size(), "class count"));
    for (const auto& label : h.labels) {
        put_u32(out, checked_u32(label.size(), "label length"));
        out.write(label.data(), static_cast<std::streamsize>(label.size()));
    }
    for (const auto& r : dataset.records()) {
        put_u32(out, r.label ? *r.label : kUnlabeled);
        const float* cs = r.condition_stack.data();  // row-major: layer by layer
        for (Eigen::Index i = 0; i < r.condition_stack.size(); ++i) put_f32(out, cs[i]);
        for (Eigen::Index i = 0; i < r.terminal.size(); ++i) put_f32(out, r.terminal[i]);
    }
    if (!out) throw std::runtime_error("failed writing feature file");
}

void write_dataset(const FeatureDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_dataset(dataset, out);
}

FeatureDataset read_dataset(std::istream& in) {
    Reader rd(in);
    std::array<char, 4> magic{};
    rd.bytes(magic.data(), 4, "magic");
    if (std::memcmp(magic.data(), "GSF1", 4) != 0) throw FormatError("bad magic, expected \"GSF1\"", 0);
    const std::uint64_t version_at = rd.offset();
    const std::uint32_t version = rd.u32("version");
    if (version != kFeatureFormatVersion) {
        throw FormatError("unsupported feature file version " + std::to_string(version), version_at);
    }
    const std::uint32_t count = rd.u32("record count");
    const std::uint64_t dims_at = rd.offset();
    DatasetHeader h;
    h.num_condition_layers = rd.u32("condition layer count");
    h.dim = rd.u32("embedding dim");
    const std::uint32_t classes = rd.u32("class count");
    if (h.num_condition_layers == 0 || h.dim == 0) {
        throw FormatError("header declares zero condition layers or zero dim", dims_at);
    }
    for (std::uint32_t b = 0; b < classes; ++b) {
        const std::uint64_t at = rd.offset();
        const std::uint32_t len = rd.u32("label length");
        if (len == 0 || len > (1u << 16)) throw FormatError("implausible label length " + std::to_string(len), at);
        std::string label(len, '\0');
        rd.bytes(label.data(), len, "label bytes");
        h.labels.push_back(std::move(label));
    }
    const auto C = static_cast<Eigen::Index>(h.num_condition_layers);
    const auto L = static_cast<Eigen::Index>(h.dim);
    std::vector<FeatureRecord> records;
    records.reserve(std::min<std::uint32_t>(count, 1u << 20));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint64_t at = rd.offset();
        FeatureRecord r;
        const std::uint32_t label = rd.u32("record label");
        if (label != kUnlabeled) {
            if (label >= classes) {
                throw FormatError("record " + std::to_string(i) + " label " + std::to_string(label) +
                                      " out of range for " + std::to_string(classes) + " classes",
                                  at);
            }
            r.label = label;
        }
        r.condition_stack.resize(C, L);
        float* cs = r.condition_stack.data();
        for (Eigen::Index j = 0; j < C * L; ++j) cs[j] = rd.f32("condition stack");
        r.terminal.resize(L);
        for (Eigen::Index j = 0; j < L; ++j) r.terminal[j] = rd.f32("terminal vector");
        records.push_back(std::move(r));
    }
    if (!rd.at_end()) throw FormatError("trailing bytes after last record", rd.offset());
    return FeatureDataset(std::move(h), std::move(records));
}

FeatureDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open feature file " + path.string());
    return read_dataset(in);
}

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw InvalidArgument("synthetic spec needs >= 2 classes");
    if (!labels.empty() && labels.size() != num_classes) {
        throw InvalidArgument("synthetic spec has " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(num_classes) + " classes");
    }
    if (dim < 4 || 2 * num_classes >= dim) throw InvalidArgument("synthetic spec needs B < L/2");
    if (num_condition_layers == 0) throw InvalidArgument("synthetic spec needs >= 1 condition layer");
    if (class_means.empty() && !(separation > 0.0)) throw InvalidArgument("synthetic separation must be > 0");
    if (!class_means.empty()) {
        if (class_means.size() != num_classes) throw InvalidArgument("class_means count != num_classes");
        for (const auto& m : class_means) {
            if (static_cast<std::size_t>(m.size()) != dim) throw InvalidArgument("class mean has wrong dim");
        }
    }
    if (!(within_class_std >= 0.0)) throw InvalidArgument("within-class std must be >= 0");
}

FeatureDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto L = static_cast<Eigen::Index>(spec.dim);
    const auto C = static_cast<Eigen::Index>(spec.num_condition_layers);

    std::vector<Eigen::VectorXd> means = spec.class_means;
    if (means.empty()) {
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            Eigen::VectorXd m(L);
            for (Eigen::Index l = 0; l < L; ++l) m[l] = spec.separation * normal(rng);
            means.push_back(std::move(m));
        }
    }

    DatasetHeader h;
    h.dim = static_cast<std::uint32_t>(spec.dim);
    h.num_condition_layers = static_cast<std::uint32_t>(spec.num_condition_layers);
    h.labels = spec.labels;
    if (h.labels.empty()) {
        for (std::size_t c = 0; c < spec.num_classes; ++c) h.labels.push_back("class" + std::to_string(c));
    }

    std::vector<FeatureRecord> records;
    records.reserve(spec.num_classes * spec.samples_per_class);
    const double s = spec.within_class_std;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t n = 0; n < spec.samples_per_class; ++n) {
            FeatureRecord r;
            r.label = static_cast<std::uint32_t>(c);
            Eigen::VectorXd x1(L);
            for (Eigen::Index l = 0; l < L; ++l) x1[l] = means[c][l] + s * normal(rng);
            r.terminal = x1.cast<float>();
            r.condition_stack.resize(C, L);
            for (Eigen::Index layer = 0; layer < C; ++layer) {
                for (Eigen::Index l = 0; l < L; ++l) {
                    r.condition_stack(layer, l) = static_cast<float>(x1[l] + s * normal(rng));
                }
            }
            records.push_back(std::move(r));
        }
    }
    return FeatureDataset(std::move(h), std::move(records));
}

DatasetSplit split(const FeatureDataset& dataset, const SplitFractions& f, std::uint64_t seed) {
    if (!(f.train >= 0.0 && f.validation >= 0.0 && f.test >= 0.0)) {
        throw InvalidArgument("split fractions must be non-negative");
    }
    if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
        throw InvalidArgument("split fractions must sum to 1");
    }
    std::vector<std::vector<std::size_t>> by_class(dataset.num_classes() + 1);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& label = dataset[i].label;
        by_class[label ? *label : dataset.num_classes()].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train, validation, test;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t n = members.size();
        const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n))));
        const auto n_val =
            std::min(n - n_train, static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n))));
        train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        validation.insert(validation.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                          members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), members.end());
    }
    for (auto* part : {&train, &validation, &test}) std::sort(part->begin(), part->end());
    return DatasetSplit{dataset.subset(train), dataset.subset(validation), dataset.subset(test)};
}

std::string summarize(const FeatureDataset& dataset) {
    std::ostringstream os;
    os << "records: " << dataset.size() << "\n"
       << "dim (L): " << dataset.dim() << "\n"
       << "condition layers (C): " << dataset.num_condition_layers() << "\n"
       << "classes (B): " << dataset.num_classes() << "\n";
    const auto counts = dataset.class_counts();
    std::size_t labeled = 0;
    for (std::size_t b = 0; b < counts.size(); ++b) {
        os << "  [" << b << "] " << dataset.header().labels[b] << ": " << counts[b] << "\n";
        labeled += counts[b];
    }
    if (labeled != dataset.size()) os << "  unlabeled: " << dataset.size() - labeled << "\n";
    return os.str();
}

}  // namespace tmclass
