#include <doctest.h>

#include "kgd/detect.hpp"
#include "kgd/random.hpp"
#include "kgd/synthetic.hpp"

using namespace kgd;

namespace {

std::vector<SystemDetections> random_tables(Rng& rng, std::size_t systems, std::size_t rows) {
    std::vector<SystemDetections> out;
    for (std::size_t s = 0; s < systems; ++s) {
        SystemDetections sys{"s" + std::to_string(s), {}};
        for (std::size_t r = 0; r < rows; ++r) {
            const double p = rng.uniform();
            sys.predictions.push_back({"d" + std::to_string(r), p, p >= 0.5});
        }
        out.push_back(std::move(sys));
    }
    return out;
}

}  // namespace

TEST_SUITE("detect") {
    TEST_CASE("one example per labeled dialogue") {
        synthetic::MiniCorpusConfig mc;
        mc.dialogues = 40;
        const auto kb = synthetic::mini_knowledge_base();
        auto corpus = synthetic::mini_dialogues(kb, mc);
        corpus[3].label.reset();
        std::vector<std::string> skipped;
        const auto ex = build_detection_examples(corpus, 512, &skipped);
        CHECK(ex.size() == 39);
        CHECK(skipped == std::vector<std::string>{corpus[3].id});
        for (std::size_t i = 0, j = 0; i < corpus.size(); ++i) {
            if (!corpus[i].label) continue;
            CHECK(ex[j].label == corpus[i].label->is_knowledge_seeking);
            CHECK(ex[j].context == linearize_history(corpus[i], 512));
            ++j;
        }
    }

    TEST_CASE("error fixing flips inside the margin when the majority disagrees") {
        std::vector<SystemDetections> s = {{"base", {{"x", 0.6, true}}}, {"a", {{"x", 0.1, false}}}, {"b", {{"x", 0.2, false}}}};
        const auto out = error_fixing_ensemble(s, {"base", 0.3});
        CHECK_FALSE(out[0].label);
        CHECK(out[0].probability == doctest::Approx(0.3));
        CHECK(error_fixing_ensemble(s, {"base", 0.0})[0].label);
        CHECK_THROWS(error_fixing_ensemble(s, {"missing", 0.3}));
    }

    TEST_CASE("zero margin returns the base labels on random tables") {
        Rng rng(4);
        for (int trial = 0; trial < 100; ++trial) {
            const auto s = random_tables(rng, 1 + rng.uniform_index(5), 30);
            const auto out = error_fixing_ensemble(s, {"s0", 0.0});
            for (std::size_t r = 0; r < out.size(); ++r) CHECK(out[r].label == s[0].predictions[r].label);
        }
    }

    TEST_CASE("flips happen only inside the margin band") {
        Rng rng(5);
        for (int trial = 0; trial < 100; ++trial) {
            const auto s = random_tables(rng, 3 + rng.uniform_index(3), 30);
            const double delta = rng.uniform(0.0, 0.5);
            const auto out = error_fixing_ensemble(s, {"s0", delta});
            for (std::size_t r = 0; r < out.size(); ++r)
                if (std::abs(s[0].predictions[r].probability - 0.5) >= delta) CHECK(out[r].label == s[0].predictions[r].label);
        }
    }

    TEST_CASE("unanimous systems are never flipped") {
        std::vector<SystemDetections> s = {{"base", {{"x", 0.55, true}}}, {"a", {{"x", 0.9, true}}}};
        for (double d : {0.0, 0.3, 1.0}) CHECK(error_fixing_ensemble(s, {"base", d})[0].label);
    }

    TEST_CASE("detection metrics") {
        DetectionTable t = {{"a", 0.9, true}, {"b", 0.9, true}, {"c", 0.1, false}};
        std::map<std::string, bool> refs = {{"a", true}, {"b", true}, {"c", false}};
        const auto p = detection_metrics(t, refs);
        CHECK(p.precision == 1.0);
        CHECK(p.recall == 1.0);
        CHECK(p.f1 == 1.0);
        CHECK(detection_from_json(detection_to_json(t)).size() == 3);
    }
}
