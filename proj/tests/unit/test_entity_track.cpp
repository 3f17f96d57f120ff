#include <doctest.h>

#include <functional>

#include "kgd/entity_track.hpp"
#include "kgd/synthetic.hpp"

using namespace kgd;

namespace {

// Plain recursive edit distance with memoization.
std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
    std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == a.size()) return b.size() - j;
        if (j == b.size()) return a.size() - i;
        if (memo[i][j] >= 0) return static_cast<std::size_t>(memo[i][j]);
        std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
        best = std::min({best, go(i + 1, j) + 1, go(i, j + 1) + 1});
        memo[i][j] = static_cast<long>(best);
        return best;
    };
    return go(0, 0);
}

KnowledgeBase lodge_kb() {
    return KnowledgeBase({{"hotel", "1", "Hamilton Lodge", "Can I cook?", "No.", "0"},
                          {"hotel", "1", "Hamilton Lodge", "Is there parking?", "Yes.", "1"},
                          {"hotel", "1", "Hamilton Lodge", "Are pets allowed?", "No.", "2"},
                          {"hotel", "2", "SW Hotel", "Is there wifi?", "Yes.", "0"},
                          {"hotel", kDomainLevel, "hotel", "Can I cancel?", "Yes.", "0"},
                          {"taxi", kDomainLevel, "taxi", "Can I pay by card?", "Yes.", "0"}});
}

Dialogue say(const std::string& text) { return {"t", {{Speaker::User, text}}, std::nullopt}; }

class OracleScorer : public SentencePairScorer {
public:
    explicit OracleScorer(std::string name) : target_(entity_sentence(name)) {}
    double score(const std::string&, const std::string& s2) const override { return s2 == target_ ? 1.0 : 0.0; }

private:
    std::string target_;
};

class ConstantScorer : public SentencePairScorer {
public:
    double score(const std::string&, const std::string&) const override { return 1.0; }
};

}  // namespace

TEST_SUITE("entity_track") {
    TEST_CASE("exact matching is case folded and order sensitive") {
        const auto kb = lodge_kb();
        const auto hit = exact_match_entities(say("can I cooking at Hamilton lodge"), kb);
        REQUIRE(hit.size() == 1);
        CHECK(hit[0].entity_id == "1");
        CHECK(exact_match_entities(say("can I booking at Hamilton launch"), kb).empty());
        CHECK(exact_match_entities(say("can I cooking lodge at Hamilton"), kb).empty());
    }

    TEST_CASE("edit distance agrees with a recursive oracle") {
        Rng rng(2);
        const std::string alphabet = "abcde ";
        for (int i = 0; i < 300; ++i) {
            std::string a, b;
            for (std::size_t k = 0, n = rng.uniform_index(9); k < n; ++k) a += alphabet[rng.uniform_index(alphabet.size())];
            for (std::size_t k = 0, n = rng.uniform_index(9); k < n; ++k) b += alphabet[rng.uniform_index(alphabet.size())];
            CHECK(levenshtein(a, b) == edit_distance(a, b));
        }
        CHECK(normalized_similarity("", "") == 1.0);
    }

    TEST_CASE("fuzzy window similarity on the example") {
        const double expected = 1.0 - static_cast<double>(edit_distance("hamilton launch", "hamilton lodge")) / 15.0;
        const double sim = window_similarity("Hamilton Lodge", "can I booking at Hamilton launch");
        CHECK(sim == doctest::Approx(expected));
        const auto kb = lodge_kb();
        const auto d = say("can I booking at Hamilton launch");
        CHECK(fuzzy_match_entities(d, kb, 0.6).size() == 1);
        CHECK(fuzzy_match_entities(d, kb, 0.8).empty());
        CHECK(window_similarity("Hamilton Lodge", "at hamilton lodge now") == 1.0);
        CHECK(fuzzy_match_entities(d, kb, 0.0).size() == kb.entities().size());
    }

    TEST_CASE("learned tracking with an oracle scorer returns exactly the ground truth") {
        const auto kb = lodge_kb();
        OracleScorer oracle("SW Hotel");
        const auto got = track_entities(oracle, say("anything"), kb, 0.5, 512);
        REQUIRE(got.size() == 1);
        CHECK(got[0].name == "SW Hotel");
        ConstantScorer one;
        CHECK(track_entities(one, say("anything"), kb, 1.0, 512).empty());
    }

    TEST_CASE("candidate collection") {
        const auto kb = lodge_kb();
        const auto lodge = *kb.entity("hotel", "1");
        const auto hotel = *kb.entity("hotel", kDomainLevel);
        CHECK(collect_candidate_indices({lodge}, kb).size() == 3 + 1);
        CHECK(collect_candidate_indices({lodge, hotel}, kb).size() == 4);
        const auto sw = *kb.entity("hotel", "2");
        const auto taxi = *kb.entity("taxi", kDomainLevel);
        // Named docs plus the domain-level docs of each covered domain.
        CHECK(collect_candidate_indices({lodge, sw, taxi}, kb).size() == 3 + 1 + 1 + 1);
    }

    TEST_CASE("entity recall") {
        const EntityRef a{"hotel", "1", "A"}, b{"hotel", "2", "B"};
        CHECK(entity_recall({{a, b}}, {{a, b}}) == 1.0);
        CHECK(entity_recall({{a}}, {{a, b}}) == 0.5);
        CHECK(entity_recall({{}}, {{a}}) == 0.0);
    }

    TEST_CASE("tracking examples hold one positive per reference entity") {
        const auto kb = synthetic::mini_knowledge_base();
        synthetic::MiniCorpusConfig mc;
        mc.dialogues = 30;
        const auto corpus = synthetic::mini_dialogues(kb, mc);
        Rng rng(1);
        const auto ex = build_tracking_examples(corpus, kb, 4, 256, rng);
        std::size_t pos = 0, refs = 0, turns = 0;
        for (const auto& e : ex) pos += e.label;
        for (const auto& d : corpus) {
            const auto r = reference_entities(d, kb).size();
            refs += r;
            turns += r > 0;
        }
        CHECK(pos == refs);
        CHECK(ex.size() == refs + 4 * turns);
    }

    TEST_CASE("config validation") {
        EntityTrackConfig c;
        c.delta_e = 1.5;
        CHECK_THROWS(c.validate());
        CHECK(parse_track_method("fuzzy") == TrackMethod::Fuzzy);
        CHECK_THROWS(parse_track_method("guess"));
    }
}
