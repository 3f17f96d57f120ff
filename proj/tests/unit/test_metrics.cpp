#include <doctest.h>

#include <cmath>

#include "kgd/metrics.hpp"
#include "kgd/random.hpp"
#include "oracles.hpp"

using namespace kgd;
using doctest::Approx;

namespace {

const std::vector<std::string> kWords = {"the", "cat", "book", "booking", "books", "room", "a", "lodge", "is", "free"};

std::string random_sentence(Rng& rng, std::size_t max_len) {
    std::string s;
    const std::size_t n = rng.uniform_index(max_len + 1);
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + kWords[rng.uniform_index(kWords.size())];
    return s;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("BLEU hand fixtures") {
        CHECK(metrics::bleu("the cat sat on the mat", {"the cat sat on the mat"}, 4) == Approx(1.0));
        CHECK(metrics::bleu("the the the the", {"the cat"}, 1) == Approx(0.25));
        CHECK(metrics::bleu("", {"the cat"}, 4) == 0.0);
        CHECK_THROWS(metrics::bleu("a", std::vector<std::string>{}, 4));
    }

    TEST_CASE("BLEU is zero when an order has no matches unless smoothed") {
        CHECK(metrics::bleu("cat the", {"the cat"}, 2) == 0.0);
        CHECK(metrics::bleu("cat the", {"the cat"}, 2, true) > 0.0);
    }

    TEST_CASE("corpus BLEU aggregates counts") {
        CHECK(metrics::corpus_bleu({{"a b c", {"a b c"}}, {"d e", {"d e"}}}) == Approx(1.0));
        CHECK(metrics::corpus_bleu({{"the cat is free", {"the cat is here"}}}, 4) ==
              Approx(metrics::bleu("the cat is free", {"the cat is here"}, 4)));
        // Two pairs: unigram 5/6, bigram 3/4, hyp 6 tokens, ref 7 tokens.
        const double expected = std::exp(1.0 - 7.0 / 6.0) * std::sqrt(5.0 / 6.0 * 3.0 / 4.0);
        CHECK(metrics::corpus_bleu({{"a b c d", {"a b c e"}}, {"x y", {"x y z"}}}, 2) == Approx(expected));
    }

    TEST_CASE("ROUGE fixtures") {
        CHECK(metrics::rouge_n("a b c", "a b c", 1) == Approx(1.0));
        CHECK(metrics::rouge_l("a b c", "a c") == Approx(0.8));
        CHECK(metrics::rouge_n("a b", "c d", 2) == 0.0);
        CHECK(metrics::rouge_l("", "") == 0.0);
    }

    TEST_CASE("METEOR-lite fixtures") {
        const double m = 4;
        CHECK(metrics::meteor_lite("w x y z", "w x y z") == Approx(1 - 0.5 * std::pow(1 / m, 3)));
        CHECK(metrics::meteor_lite("a b", "c d") == 0.0);
        CHECK(metrics::meteor_lite("booking", "book") > 0.0);
    }

    TEST_CASE("ranking and detection fixtures") {
        const std::vector<std::vector<std::string>> first = {{"a", "b"}}, gold_a = {{"a"}};
        CHECK(metrics::mrr_at_k(first, gold_a, 5) == 1.0);
        const std::vector<std::vector<std::string>> third = {{"x", "y", "a", "z"}};
        const auto s = metrics::ranking_scores(third, gold_a);
        CHECK(s.mrr5 == Approx(1.0 / 3));
        CHECK(s.r1 == 0.0);
        CHECK(s.r5 == 1.0);
        const auto p = metrics::precision_recall_f1({true, true, true, false, false}, {true, true, false, true, true});
        CHECK(p.precision == Approx(2.0 / 3));
        CHECK(p.recall == Approx(0.5));
        CHECK(p.f1 == Approx(4.0 / 7));
        const auto none = metrics::precision_recall_f1({false, false}, {true, false});
        CHECK(none.precision == 0.0);
        CHECK(none.f1 == 0.0);
    }

    TEST_CASE("metrics agree with brute-force oracles on random pairs") {
        Rng rng(11);
        for (int i = 0; i < 150; ++i) {
            const auto h = random_sentence(rng, 8), r = random_sentence(rng, 8);
            const auto hw = oracle::split(h), rw = oracle::split(r);
            for (int n = 1; n <= 4; ++n) {
                if (!rw.empty()) CHECK(metrics::bleu(h, {r}, n) == Approx(oracle::bleu(hw, {rw}, n)).epsilon(1e-12));
            }
            CHECK(metrics::rouge_n(h, r, 1) == Approx(oracle::rouge_n(hw, rw, 1)).epsilon(1e-12));
            CHECK(metrics::rouge_n(h, r, 2) == Approx(oracle::rouge_n(hw, rw, 2)).epsilon(1e-12));
            CHECK(metrics::rouge_l(h, r) == Approx(oracle::rouge_l(hw, rw)).epsilon(1e-12));
            CHECK(metrics::meteor_lite(h, r) == Approx(oracle::meteor_lite(hw, rw)).epsilon(1e-12));
        }
    }

    TEST_CASE("bounded and symmetric where required") {
        Rng rng(12);
        for (int i = 0; i < 200; ++i) {
            const auto h = random_sentence(rng, 7), r = random_sentence(rng, 7);
            for (double v : {metrics::rouge_n(h, r, 1), metrics::rouge_l(h, r), metrics::meteor_lite(h, r),
                             metrics::chrf(h, r)}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0 + 1e-12);
            }
            if (oracle::split(h).size() == oracle::split(r).size())
                CHECK(metrics::rouge_n(h, r, 1) == Approx(metrics::rouge_n(r, h, 1)));
            if (!r.empty()) {
                const double b1 = metrics::bleu(h, {r}, 1), b2 = metrics::bleu(h, {r}, 2);
                if (b2 > 0) CHECK(b2 <= b1 + 1e-12);
            }
        }
    }

    TEST_CASE("generation report keys") {
        const auto rep = metrics::generation_report({"a b c"}, {"a b c"});
        for (const char* k : {"bleu-1", "bleu-2", "bleu-3", "bleu-4", "meteor-lite", "rouge-1", "rouge-2", "rouge-l"})
            CHECK(rep.scores.count(k) == 1);
        CHECK(rep.scores.at("bleu-1") == Approx(1.0));
    }
}
