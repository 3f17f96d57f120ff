#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "kgd/generate.hpp"

using namespace kgd;

namespace {

std::map<std::string, RankedList> gold_selection(const Corpus& corpus) {
    std::map<std::string, RankedList> out;
    for (const auto& d : corpus) {
        if (!d.label || !d.label->is_knowledge_seeking) continue;
        RankedList l{d.id, {}};
        for (const auto& r : d.label->knowledge_refs) l.items.push_back({r, 1.0});
        out[d.id] = l;
    }
    return out;
}

GenTrainConfig small_gen_config() {
    GenTrainConfig c;
    c.encoder.dim = 8;
    c.encoder.trigram_buckets = 64;
    c.encoder.max_positions = 64;
    c.hidden = 16;
    c.max_history_tokens = 48;
    c.max_target_tokens = 16;
    c.learning_rate = 1e-2;
    c.batch_size = 8;
    return c;
}

}  // namespace

TEST_SUITE("generate") {
    TEST_CASE("frequent trailing questions are mined") {
        std::vector<std::string> responses;
        for (int i = 0; i < 30; ++i) responses.push_back("Room " + std::to_string(i) + " allows pets. Would you like to book a room?");
        responses.push_back("It is open late. Do you want the address?");
        for (int i = 0; i < 25; ++i) responses.push_back("Yes. It is free.");
        const auto found = mine_frequent_interrogatives(responses, 20);
        CHECK(found == std::vector<std::string>{"Would you like to book a room?"});
    }

    TEST_CASE("listed questions are stripped unless nothing would remain") {
        const std::vector<std::string> q = {"Would you like to book a room?"};
        CHECK(strip_interrogatives("Room A allows pets. Would you like to book a room?", q) == "Room A allows pets.");
        CHECK(strip_interrogatives("Room A allows pets.", q) == "Room A allows pets.");
        CHECK(strip_interrogatives("Would you like to book a room?", q) == "Would you like to book a room?");
        CHECK(split_sentences("One. Two? Three!").size() == 3);
    }

    TEST_CASE("contexts without substitution keep the selection in order") {
        const auto s = fixtures::mini_scene(40, 1);
        auto c = small_gen_config();
        c.p_s = 0.0;
        c.max_history_tokens = 512;
        Rng rng(1);
        std::map<std::string, RankedList> sel;
        for (const auto& d : s.corpus) {
            if (!d.label || !d.label->is_knowledge_seeking) continue;
            RankedList l{d.id, {}};
            l.items.push_back({d.label->knowledge_refs.front(), 0.9});
            for (std::size_t i = 0, added = 0; added < 4; ++i)
                if (s.kb[i].ref() != d.label->knowledge_refs.front()) {
                    l.items.push_back({s.kb[i].ref(), 0.1});
                    ++added;
                }
            sel[d.id] = l;
        }
        for (const auto& ex : build_gen_examples(s.corpus, s.kb, sel, c, rng)) {
            const auto& l = sel.at(ex.dialogue_id);
            REQUIRE(ex.knowledge.size() == 5);
            for (std::size_t i = 0; i < 5; ++i) CHECK(ex.knowledge[i] == l.items[i].ref);
            CHECK_FALSE(ex.substituted);
            // The best snippet's block sits right before the final user turn.
            const auto best = ex.context.rfind("<kng_1>");
            const auto user = ex.context.rfind("<user>");
            CHECK(best < user);
            CHECK(ex.context.find("<kng_", best + 1) == std::string::npos);
            CHECK(ex.context.find("<user>", best) == user);
        }
    }

    TEST_CASE("distractor substitution rate follows p_s") {
        const auto s = fixtures::mini_scene(1400, 2);
        auto c = small_gen_config();
        c.p_s = 0.15;
        Rng rng(3);
        const auto ex = build_gen_examples(s.corpus, s.kb, gold_selection(s.corpus), c, rng);
        REQUIRE(ex.size() >= 1000);
        double hits = 0;
        for (const auto& e : ex) {
            hits += e.substituted;
            if (e.substituted) CHECK(std::count(e.provenance.begin(), e.provenance.end(), BlockSource::Distractor) == 1);
        }
        const double rate = hits / static_cast<double>(ex.size());
        CHECK(rate >= 0.12);
        CHECK(rate <= 0.18);
    }

    TEST_CASE("toy generator memorizes a small training set") {
        std::vector<GenExample> ex;
        const std::vector<std::string> colors = {"red", "blue", "green", "black", "white"};
        const std::vector<std::string> things = {"lodge", "inn", "museum", "garden", "pool", "gallery", "bridge", "market", "castle", "tower"};
        for (std::size_t i = 0; i < 50; ++i) {
            const auto& thing = things[i % things.size()];
            const auto& color = colors[i / things.size()];
            ex.push_back({std::to_string(i), "<kng_1> <ent> " + thing + " <ans> " + color + " <user> what color is the " + thing + " " + color + " ?",
                          "<resp> the " + thing + " is " + color, {}, {}, false});
        }
        auto c = small_gen_config();
        c.epochs = 40;
        c.hidden = 24;
        const auto gen = train_generator(ex, c);
        int exact = 0;
        for (const auto& e : ex) exact += gen.greedy(e.context) == target_response(e.target);
        CHECK(exact >= 40);
    }

    TEST_CASE("training is deterministic and a zero learning rate freezes parameters") {
        std::vector<GenExample> ex = {{"a", "<user> hi", "<resp> hello there", {}, {}, false},
                                      {"b", "<user> bye", "<resp> goodbye", {}, {}, false}};
        auto c = small_gen_config();
        c.epochs = 2;
        CHECK(train_generator(ex, c).params().equals(train_generator(ex, c).params()));
        c.learning_rate = 0;
        c.epochs = 0;
        const auto untrained = train_generator(ex, c);
        c.epochs = 3;
        CHECK(train_generator(ex, c).params().equals(untrained.params()));
    }

    TEST_CASE("n-best lists are sorted, distinct and finite") {
        std::vector<GenExample> ex = {{"a", "<user> is there parking", "<resp> yes there is free parking", {}, {}, false},
                                      {"b", "<user> can i cook", "<resp> no cooking is not allowed", {}, {}, false}};
        auto c = small_gen_config();
        c.epochs = 5;
        const auto gen = train_generator(ex, c);
        for (const auto& ctx : {"<user> is there parking", "<user> can i cook", "<user> something else entirely"}) {
            const auto n = decode_nbest(gen, ctx, 5);
            CHECK(!n.empty());
            CHECK(n.size() <= 5);
            std::set<std::string> seen;
            for (std::size_t i = 0; i < n.size(); ++i) {
                CHECK(std::isfinite(n[i].logprob));
                CHECK(n[i].logprob <= 0.0);
                if (i) CHECK(n[i - 1].logprob >= n[i].logprob);
                seen.insert(n[i].text);
            }
            CHECK(seen.size() == n.size());
            CHECK(decode_nbest(gen, ctx, 1).front().text == gen.greedy(ctx));
        }
    }
}
