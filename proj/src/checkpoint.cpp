#include "tmclass/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tmclass/config.hpp"
#include "tmclass/errors.hpp"

namespace tmclass {

namespace {

template <class U>
void put(std::ostream& out, U v) {
    std::array<char, sizeof(U)> b{};
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b.data(), sizeof(U));
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}
    std::uint64_t offset() const { return offset_; }

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(in_.gcount());
        if (got != n) throw FormatError(std::string("truncated checkpoint while reading ") + what, offset_ + got);
        offset_ += n;
    }

    template <class U>
    U get(const char* what) {
        std::array<unsigned char, sizeof(U)> b{};
        bytes(reinterpret_cast<char*>(b.data()), sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
        return v;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
    std::uint64_t offset_ = 0;
};

nlohmann::json layout_json(const ParamLayout& layout) {
    auto arr = nlohmann::json::array();
    for (const auto& e : layout.entries()) arr.push_back({e.name, e.rows, e.cols});
    return arr;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
    const Estimator est(ckpt.config);
    if (ckpt.params.values.size() != est.parameter_count()) {
        throw InvalidArgument("checkpoint parameters do not match the estimator configuration");
    }
    nlohmann::json meta;
    meta["estimator"] = ckpt.config;
    meta["layout"] = layout_json(est.layout());
    const std::string text = meta.dump();

    out.write("TMCK", 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, ckpt.params.values.size());
    for (float f : ckpt.params.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    put<std::uint32_t>(out, ckpt.optimizer ? 1u : 0u);
    if (ckpt.optimizer) {
        const auto& o = *ckpt.optimizer;
        if (o.first_moment.size() != ckpt.params.values.size() || o.second_moment.size() != ckpt.params.values.size()) {
            throw InvalidArgument("optimizer moments do not match the parameter count");
        }
        put<std::uint64_t>(out, o.step);
        put<std::uint64_t>(out, o.seed);
        put<std::uint64_t>(out, o.first_moment.size());
        for (double d : o.first_moment) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
        for (double d : o.second_moment) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
    Reader rd(in);
    std::array<char, 4> magic{};
    rd.bytes(magic.data(), 4, "magic");
    if (std::memcmp(magic.data(), "TMCK", 4) != 0) throw FormatError("bad checkpoint magic, expected \"TMCK\"", 0);
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const auto text_len = rd.get<std::uint32_t>("config length");
    const std::uint64_t text_at = rd.offset();
    std::string text(text_len, '\0');
    rd.bytes(text.data(), text_len, "config text");

    Checkpoint ckpt;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(text);
        meta.at("estimator").get_to(ckpt.config);
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad checkpoint config: ") + e.what(), text_at);
    }
    const Estimator est(ckpt.config);
    if (meta.value("layout", nlohmann::json()) != layout_json(est.layout())) {
        throw FormatError("checkpoint parameter layout does not match its estimator config", text_at);
    }
    const std::uint64_t count_at = rd.offset();
    const auto count = rd.get<std::uint64_t>("parameter count");
    if (count != est.parameter_count()) {
        throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, config implies " +
                              std::to_string(est.parameter_count()),
                          count_at);
    }
    ckpt.params.values.resize(count);
    for (auto& f : ckpt.params.values) f = std::bit_cast<float>(rd.get<std::uint32_t>("parameters"));
    const auto has_opt = rd.get<std::uint32_t>("optimizer flag");
    if (has_opt > 1) throw FormatError("bad optimizer flag", rd.offset() - 4);
    if (has_opt == 1) {
        OptimizerSnapshot o;
        o.step = rd.get<std::uint64_t>("optimizer step");
        o.seed = rd.get<std::uint64_t>("optimizer seed");
        const std::uint64_t n_at = rd.offset();
        const auto n = rd.get<std::uint64_t>("moment count");
        if (n != count) throw FormatError("optimizer moment count does not match parameter count", n_at);
        o.first_moment.resize(n);
        o.second_moment.resize(n);
        for (auto& d : o.first_moment) d = std::bit_cast<double>(rd.get<std::uint64_t>("first moments"));
        for (auto& d : o.second_moment) d = std::bit_cast<double>(rd.get<std::uint64_t>("second moments"));
        ckpt.optimizer = std::move(o);
    }
    if (!rd.at_end()) throw FormatError("trailing bytes after checkpoint", rd.offset());
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        write_checkpoint(ckpt, out);
        out.close();
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

}  // namespace tmclass
