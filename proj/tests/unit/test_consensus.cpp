#include <doctest.h>

#include "kgd/consensus.hpp"
#include "kgd/random.hpp"

using namespace kgd;
using doctest::Approx;

namespace {

const std::vector<std::string> kWords = {"yes", "no", "the", "lodge", "has", "free", "parking", "wifi", "is", "open"};

std::string random_text(Rng& rng) {
    std::string s;
    for (std::size_t i = 0, n = 2 + rng.uniform_index(6); i < n; ++i) s += (i ? " " : "") + kWords[rng.uniform_index(kWords.size())];
    return s;
}

CandidatePool random_pool(Rng& rng, const std::string& id) {
    CandidatePool p{id, {}};
    for (std::size_t s = 0, systems = 1 + rng.uniform_index(3); s < systems; ++s)
        for (std::size_t r = 1, n = 1 + rng.uniform_index(3); r <= n; ++r)
            p.candidates.push_back({random_text(rng), "sys" + std::to_string(s), r, -rng.uniform(0.0, 5.0)});
    return p;
}

ConsensusWeights only(std::size_t i, double v = 1.0) {
    ConsensusWeights w{};
    w[i] = v;
    return w;
}

}  // namespace

TEST_SUITE("consensus") {
    TEST_CASE("singleton and identical pools") {
        const CandidatePool single{"t", {{"the lodge has parking", "a", 1, -1.0}}};
        const auto f = extract_features(single, 0);
        for (std::size_t i = 0; i < 9; ++i) CHECK(f[i] == 0.0);
        CHECK(f[9] == 1.0);
        CHECK(consensus_select(single, default_weights()) == 0);

        const CandidatePool same{"t", {{"the lodge has free parking", "a", 1, -1.0}, {"the lodge has free parking", "b", 1, -2.0}}};
        const auto g = extract_features(same, 1);
        for (std::size_t i = 0; i < 9; ++i) CHECK(g[i] == Approx(i == 7 ? metrics::meteor_lite("the lodge has free parking", "the lodge has free parking") : 1.0));
    }

    TEST_CASE("features are means of metric values against the peers") {
        const CandidatePool p{"t",
                              {{"yes the lodge has free parking", "a", 1, -1.0},
                               {"yes there is parking", "a", 2, -2.0},
                               {"no parking at the lodge", "b", 1, -1.5}}};
        const auto f = extract_features(p, 0);
        std::array<double, 9> expect{};
        for (std::size_t j : {1, 2}) {
            const auto& h = p.candidates[0].text;
            const auto& r = p.candidates[j].text;
            for (int n = 1; n <= 4; ++n) expect[n - 1] += metrics::bleu(h, {r}, n, true) / 2;
            expect[4] += metrics::rouge_n(h, r, 1) / 2;
            expect[5] += metrics::rouge_n(h, r, 2) / 2;
            expect[6] += metrics::rouge_l(h, r) / 2;
            expect[7] += metrics::meteor_lite(h, r) / 2;
            expect[8] += metrics::chrf(h, r) / 2;
        }
        for (std::size_t i = 0; i < 9; ++i) CHECK(f[i] == Approx(expect[i]).epsilon(1e-12));
        CHECK(extract_features(p, 1)[9] == 0.5);
    }

    TEST_CASE("selection rules") {
        const CandidatePool p{"t",
                              {{"alpha", "b", 1, -3.0}, {"beta", "a", 2, -0.5}, {"gamma", "a", 1, -1.0}, {"delta", "c", 1, -1.0}}};
        ConsensusWeights zero{};
        CHECK(consensus_select(p, zero) == 1);
        const auto rr = consensus_select(p, only(9));
        CHECK(p.candidates[rr].rank == 1);
        // Equal logprob: lexicographic system id.
        CHECK(rr == 2);
        CHECK_THROWS(consensus_select(CandidatePool{"t", {}}, zero));
    }

    TEST_CASE("selection is invariant to positive rescaling of the weights") {
        Rng rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            const auto p = random_pool(rng, "t");
            ConsensusWeights w;
            for (auto& x : w) x = rng.uniform(-1.0, 1.0);
            ConsensusWeights scaled = w;
            const double k = rng.uniform(0.01, 100.0);
            for (auto& x : scaled) x *= k;
            CHECK(consensus_select(p, w) == consensus_select(p, scaled));
        }
    }

    TEST_CASE("pool validation") {
        CandidatePool dup{"t", {{"a", "s", 1, 0}, {"b", "s", 1, 0}}};
        CHECK_THROWS(dup.validate());
        CandidatePool gap{"t", {{"a", "s", 1, 0}, {"b", "s", 3, 0}}};
        CHECK_THROWS(gap.validate());
        CandidatePool ok{"t", {{"a", "s", 2, 0}, {"b", "s", 1, 0}, {"c", "u", 1, 0}}};
        CHECK_NOTHROW(ok.validate());
    }

    TEST_CASE("tuning finds the better system") {
        std::vector<CandidatePool> pools;
        std::vector<std::string> refs;
        Rng rng(5);
        for (int i = 0; i < 12; ++i) {
            const auto ref = random_text(rng) + " " + random_text(rng);
            refs.push_back(ref);
            CandidatePool p{"t" + std::to_string(i), {}};
            p.candidates.push_back({ref, "good", 2, -4.0});
            p.candidates.push_back({"sorry i do not know", "bad", 1, -0.1});
            p.candidates.push_back({"sorry i can not say", "bad", 2, -0.2});
            p.candidates.push_back({"sorry nothing here", "good", 1, -3.0});
            pools.push_back(p);
        }
        std::vector<std::string> good_texts;
        for (const auto& r : refs) good_texts.push_back(r);
        std::vector<metrics::HypRefs> best;
        for (const auto& r : refs) best.push_back({r, {r}});
        TuneConfig tc;
        tc.seed = 1;
        const auto res = tune_weights(pools, refs, only(9), tc);
        CHECK(res.final_bleu == Approx(metrics::corpus_bleu(best, 4)));
        CHECK(res.final_bleu > res.initial_bleu);
        for (const auto& p : pools) CHECK(p.candidates[consensus_select(p, res.weights)].system_id == "good");
    }

    TEST_CASE("tuning never lowers dev BLEU and keeps an optimal start") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(seed);
            std::vector<CandidatePool> pools;
            std::vector<std::string> refs;
            for (int i = 0; i < 8; ++i) {
                pools.push_back(random_pool(rng, std::to_string(i)));
                refs.push_back(random_text(rng));
            }
            TuneConfig tc;
            tc.seed = seed;
            tc.restarts = 2;
            tc.max_rounds = 5;
            const auto res = tune_weights(pools, refs, default_weights(), tc);
            CHECK(res.final_bleu >= res.initial_bleu);
            std::vector<std::vector<FeatureVector>> feats;
            for (const auto& p : pools) feats.push_back(pool_features(p));
            CHECK(consensus_bleu(pools, feats, refs, res.weights) == Approx(res.final_bleu).epsilon(1e-12));
            const auto again = tune_weights(pools, refs, res.weights, tc);
            CHECK(again.final_bleu >= res.final_bleu);
        }
    }

    TEST_CASE("weights and pools serialize") {
        ConsensusWeights w;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 * static_cast<double>(i) - 1;
        CHECK(weights_from_json(weights_to_json(w)) == w);
        auto bad = weights_to_json(w);
        bad["features"][0] = "bleu9";
        CHECK_THROWS(weights_from_json(bad));
        Rng rng(2);
        const std::vector<CandidatePool> pools = {random_pool(rng, "a"), random_pool(rng, "b")};
        const auto back = pools_from_jsonl(pools_to_jsonl(pools));
        REQUIRE(back.size() == 2);
        CHECK(back[1].candidates.size() == pools[1].candidates.size());
        CHECK(back[0].candidates[0].text == pools[0].candidates[0].text);
    }
}
