#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "tmclass/errors.hpp"
#include "tmclass/taxonomy.hpp"

using namespace tmclass;

namespace {

std::vector<std::string> labels_n(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
    return out;
}

}  // namespace

TEST_CASE("ClassTaxonomy invariants") {
    const ClassTaxonomy tax({"angry", "happy", "sad"});
    CHECK(tax.size() == 3);
    CHECK(tax.index_of("happy") == 1);
    CHECK_THROWS_AS(tax.index_of("calm"), InvalidArgument);
    CHECK_THROWS_AS(ClassTaxonomy({"only"}), InvalidArgument);
    CHECK_THROWS_AS(ClassTaxonomy({"a", "a"}), InvalidArgument);
    CHECK_THROWS_AS(ClassTaxonomy({"a", ""}), InvalidArgument);
}

TEST_CASE("encode_class examples") {
    const Eigen::VectorXd v = encode_class(0, 4);
    const double expected[] = {0.0, 1.0, 0.0, -1.0};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(v[i] - expected[i]) <= 1e-15);

    CHECK(std::abs(encode_class(0, 8).dot(encode_class(1, 8))) <= 1e-9);

    // direct summation of sin^2 terms
    double sq = 0.0;
    for (int l = 0; l < 1024; ++l) {
        const double s = std::sin(2.0 * std::numbers::pi * l / 1024.0 * 3.0);
        sq += s * s;
    }
    CHECK(sq == doctest::Approx(512.0).epsilon(1e-9));
    CHECK(std::abs(encode_class(2, 1024).squaredNorm() - 512.0) <= 1e-3);

    CHECK(encode_class(5, 32) == encode_class(5, 32));
}

TEST_CASE("encode_class preconditions") {
    CHECK_THROWS_AS(encode_class(0, 3), InvalidArgument);
    CHECK_THROWS_AS(encode_class(1, 4), DimensionTooSmall);  // index + 1 = 2 is not < 4/2
    CHECK_THROWS_AS(encode_class(3, 8), DimensionTooSmall);
    CHECK_NOTHROW(encode_class(2, 8));
}

TEST_CASE("build_codebook") {
    const auto cb = build_codebook(ClassTaxonomy(labels_n(7)), 1024);
    CHECK(cb.codewords().rows() == 7);
    CHECK(cb.codewords().cols() == 1024);
    const Eigen::MatrixXd gram = cb.codewords() * cb.codewords().transpose();
    for (int i = 0; i < 7; ++i) {
        CHECK(std::abs(gram(i, i) - 512.0) <= 1e-6 * 1024);
        for (int j = 0; j < i; ++j) CHECK(std::abs(gram(i, j)) <= 1e-6 * 1024);
    }

    CHECK_THROWS_AS(build_codebook(ClassTaxonomy(labels_n(2)), 4), DimensionTooSmall);

    // Gram matrix of 4 classes at L=64, computed entry by entry from the closed form
    const auto cb4 = build_codebook(ClassTaxonomy(labels_n(4)), 64);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double g = 0.0;
            for (int l = 0; l < 64; ++l) {
                g += std::sin(2.0 * std::numbers::pi * l / 64.0 * (i + 1)) *
                     std::sin(2.0 * std::numbers::pi * l / 64.0 * (j + 1));
            }
            CHECK(std::abs(g - (i == j ? 32.0 : 0.0)) <= 1e-6);
            CHECK(std::abs(cb4.codewords().row(i).dot(cb4.codewords().row(j)) - g) <= 1e-9);
        }
    }
}

TEST_CASE("orthogonality and norm uniformity over many (B, L)") {
    for (std::size_t L : {8u, 16u, 33u, 64u, 100u, 256u}) {
        for (std::size_t B = 2; 2 * B < L && B <= 12; ++B) {
            const auto cb = build_codebook(ClassTaxonomy(labels_n(B)), L);
            const Eigen::MatrixXd gram = cb.codewords() * cb.codewords().transpose();
            const double tol = 1e-6 * static_cast<double>(L);
            for (std::size_t i = 0; i < B; ++i) {
                CHECK(std::abs(gram(i, i) - static_cast<double>(L) / 2.0) <= tol);
                for (std::size_t j = 0; j < i; ++j) CHECK(std::abs(gram(i, j)) <= tol);
            }
        }
    }
}

TEST_CASE("classify examples") {
    const auto cb = build_codebook(ClassTaxonomy(labels_n(4)), 64);
    auto self = classify(cb.codeword(2), cb);
    CHECK(self.predicted == 2);
    CHECK(self.scores[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(self.scores.size() == 4);

    const auto cb2 = build_codebook(ClassTaxonomy(labels_n(2)), 8);
    auto flipped = classify(-cb2.codeword(0), cb2);
    CHECK(flipped.predicted == 1);
    CHECK(flipped.scores[0] == doctest::Approx(-1.0));
    CHECK(std::abs(flipped.scores[1]) < 1e-12);

    // brute-force cosine over all classes
    const Eigen::VectorXd est = 0.6 * cb.codeword(1) + 0.1 * cb.codeword(3);
    std::size_t best = 0;
    double best_score = -2.0;
    for (std::size_t b = 0; b < 4; ++b) {
        const Eigen::VectorXd c = cb.codeword(b);
        const double s = est.dot(c) / (est.norm() * c.norm());
        if (s > best_score) best_score = s, best = b;
    }
    CHECK(best == 1);
    CHECK(classify(est, cb).predicted == 1);
}

TEST_CASE("classify errors and ties") {
    const auto cb = build_codebook(ClassTaxonomy(labels_n(3)), 16);
    CHECK_THROWS_AS(classify(Eigen::VectorXd::Zero(16), cb), DegenerateInput);
    CHECK_THROWS_AS(classify(Eigen::VectorXd::Ones(15), cb), InvalidArgument);
    // equal similarity to classes 1 and 2 -> lowest index wins
    const Eigen::VectorXd tie = cb.codeword(1) + cb.codeword(2);
    CHECK(classify(tie, cb).predicted == 1);
}

TEST_CASE("cosine argmax equals inner-product argmax; scale invariance") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.01, 100.0);
    const auto cb = build_codebook(ClassTaxonomy(labels_n(7)), 64);
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(64, [&] { return n(rng); });
        Eigen::Index raw_best = 0;
        (cb.codewords() * v).maxCoeff(&raw_best);
        const auto c = classify(v, cb);
        CHECK(c.predicted == static_cast<std::size_t>(raw_best));
        if (trial < 100) CHECK(classify(u(rng) * v, cb).predicted == c.predicted);
    }
}

TEST_CASE("codebook manifest round trip") {
    const auto cb = build_codebook(ClassTaxonomy({"neutral", "happy", "sad"}), 32);
    const auto text = cb.manifest_json();
    const auto back = TaxonomyCodebook::from_manifest_json(text);
    CHECK(back.taxonomy() == cb.taxonomy());
    CHECK(back.dim() == 32);
    CHECK(back.codewords() == cb.codewords());
    CHECK(text.find("checksums") != std::string::npos);

    std::string tampered = text;
    const auto pos = tampered.find("\"checksums\": [\n    \"") + 20;
    tampered[pos] = tampered[pos] == '0' ? '1' : '0';
    CHECK_THROWS_AS(TaxonomyCodebook::from_manifest_json(tampered), InvalidArgument);
    CHECK_THROWS_AS(TaxonomyCodebook::from_manifest_json("{\"dim\": 4}"), InvalidArgument);
}
