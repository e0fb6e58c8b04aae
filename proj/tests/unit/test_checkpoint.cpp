#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "tmclass/checkpoint.hpp"
#include "tmclass/errors.hpp"

using namespace tmclass;

namespace {

EstimatorConfig small_config(TrunkVariant trunk) {
    EstimatorConfig c;
    c.dim = 16;
    c.num_condition_layers = 2;
    c.trunk = trunk;
    c.trunk_depth = 2;
    c.trunk_width = 16;
    c.num_heads = 2;
    c.num_tokens = 4;
    c.ffn_multiplier = 2;
    c.time_embed_dim = 8;
    return c;
}

std::string to_bytes(const Checkpoint& c) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(c, os);
    return os.str();
}

Checkpoint from_bytes(const std::string& b) {
    std::istringstream is(b, std::ios::binary);
    return read_checkpoint(is);
}

OptimizerSnapshot random_snapshot(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    OptimizerSnapshot s{1234, seed, std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        s.first_moment[i] = g(rng);
        s.second_moment[i] = std::abs(g(rng)) * 1e-7;
    }
    return s;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    for (auto trunk : {TrunkVariant::MlpBaseline, TrunkVariant::StagedTransformer}) {
        CAPTURE(to_string(trunk));
        const Estimator est(small_config(trunk));
        Checkpoint c{est.config(), est.initialize(5), std::nullopt};
        // perturb so zero-initialized tensors are not trivially equal
        for (std::size_t i = 0; i < c.params.values.size(); ++i) c.params.values[i] += 1e-3f * static_cast<float>(i % 7);

        const auto plain = from_bytes(to_bytes(c));
        CHECK(plain.config == c.config);
        CHECK(std::memcmp(plain.params.values.data(), c.params.values.data(), 4 * c.params.values.size()) == 0);
        CHECK_FALSE(plain.optimizer.has_value());

        c.optimizer = random_snapshot(c.params.values.size(), 9);
        const auto full = from_bytes(to_bytes(c));
        REQUIRE(full.optimizer.has_value());
        CHECK(*full.optimizer == *c.optimizer);
        CHECK(to_bytes(full) == to_bytes(c));
    }
}

TEST_CASE("save_checkpoint / load_checkpoint on disk") {
    const auto dir = std::filesystem::temp_directory_path() / "tmclass_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "model.tmck";
    const Estimator est(small_config(TrunkVariant::MlpBaseline));
    const Checkpoint c{est.config(), est.initialize(1), random_snapshot(est.parameter_count(), 2)};
    save_checkpoint(c, path);
    save_checkpoint(c, path);  // overwrite in place
    const auto back = load_checkpoint(path);
    CHECK(back.params == c.params);
    CHECK(*back.optimizer == *c.optimizer);
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    CHECK_THROWS(load_checkpoint(dir / "missing.tmck"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects damaged input") {
    const Estimator est(small_config(TrunkVariant::StagedTransformer));
    const Checkpoint c{est.config(), est.initialize(1), random_snapshot(est.parameter_count(), 3)};
    const auto bytes = to_bytes(c);

    SUBCASE("truncation at every prefix length class") {
        for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
            CAPTURE(cut);
            CHECK_THROWS_AS(from_bytes(bytes.substr(0, cut)), FormatError);
        }
    }
    SUBCASE("bad magic and version") {
        auto b = bytes;
        b[0] = 'X';
        CHECK_THROWS_AS(from_bytes(b), FormatError);
        b = bytes;
        b[4] = 9;
        CHECK_THROWS_AS(from_bytes(b), FormatError);
    }
    SUBCASE("trailing bytes") { CHECK_THROWS_AS(from_bytes(bytes + '\0'), FormatError); }
    SUBCASE("writer refuses a parameter count that does not match the config") {
        Checkpoint bad = c;
        bad.params.values.pop_back();
        std::ostringstream os;
        CHECK_THROWS_AS(write_checkpoint(bad, os), InvalidArgument);
        bad = c;
        bad.optimizer->second_moment.pop_back();
        CHECK_THROWS_AS(write_checkpoint(bad, os), InvalidArgument);
    }
    SUBCASE("layout that disagrees with the stored config") {
        // swap the trunk name inside the JSON header; the stored layout no longer matches
        auto b = bytes;
        const auto pos = b.find("\"staged-transformer\"");
        REQUIRE(pos != std::string::npos);
        b.replace(pos, 20, "\"mlp-baseline\"      ");
        try {
            from_bytes(b);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("layout") != std::string::npos);
        }
    }
}
