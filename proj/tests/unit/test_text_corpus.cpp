#include <doctest.h>

#include <set>

#include "kgd/corpus.hpp"
#include "kgd/random.hpp"
#include "kgd/text.hpp"

using namespace kgd;

namespace {

Dialogue three_turns() {
    return {"d0", {{Speaker::User, "hi"}, {Speaker::System, "hello"}, {Speaker::User, "thanks"}}, std::nullopt};
}

}  // namespace

TEST_SUITE("text") {
    TEST_CASE("tags are single tokens and survive tokenization") {
        const auto t = text::tokenize("<user> Can I cook? <sys> No.");
        CHECK(t == std::vector<std::string>{"<user>", "can", "i", "cook", "?", "<sys>", "no", "."});
        CHECK(text::count_tokens("<user> a b <sys>") == 4);
        CHECK(text::word_tokens("<user> Hi, there!") == std::vector<std::string>{"hi", "there"});
    }

    TEST_CASE("escaping reserved tags is idempotent") {
        const std::string raw = "say <user> and ⟨sys⟩ please";
        const auto once = text::escape_reserved(raw);
        CHECK(once.find("<user>") == std::string::npos);
        CHECK(once.find("⟨sys⟩") == std::string::npos);
        CHECK(text::escape_reserved(once) == once);
    }

    TEST_CASE("split_word separates punctuation") {
        const auto p = text::split_word("(lodge?)");
        CHECK(p.prefix == "(");
        CHECK(p.core == "lodge");
        CHECK(p.suffix == "?)");
    }

    TEST_CASE("seed mixing is deterministic and salt dependent") {
        CHECK(text::mix_seed(1, "a") == text::mix_seed(1, "a"));
        CHECK(text::mix_seed(1, "a") != text::mix_seed(1, "b"));
        CHECK(text::mix_seed(1, "a") != text::mix_seed(2, "a"));
    }
}

TEST_SUITE("corpus") {
    TEST_CASE("non-target label keeps an empty knowledge list") {
        const auto c = parse_corpus(R"([[{"speaker":"U","text":"a"},{"speaker":"S","text":"b"},{"speaker":"U","text":"c"}]])",
                                    std::string(R"([{"target":false}])"));
        REQUIRE(c.size() == 1);
        REQUIRE(c[0].label);
        CHECK_FALSE(c[0].label->is_knowledge_seeking);
        CHECK(c[0].label->knowledge_refs.empty());
        CHECK(c[0].turns.size() == 3);
    }

    TEST_CASE("label count must match dialogue count") {
        const std::string logs = R"([[{"speaker":"U","text":"a"}],[{"speaker":"U","text":"b"}],[{"speaker":"U","text":"c"}]])";
        CHECK_THROWS_AS(parse_corpus(logs, std::string(R"([{"target":false},{"target":false}])")), AlignmentError);
    }

    TEST_CASE("literal tags in utterances are escaped and survive a round trip") {
        const auto c = parse_corpus("[[{\"speaker\":\"U\",\"text\":\"type ⟨user⟩ here\"}]]", std::nullopt);
        const auto& t = c[0].turns[0].text;
        CHECK(t.find("⟨user⟩") == std::string::npos);
        const auto back = parse_corpus(logs_to_json(c), std::nullopt);
        CHECK(back[0].turns[0].text == t);
    }

    TEST_CASE("knowledge base parsing") {
        const auto kb = parse_knowledge_base(
            R"({"hotel": {"1": {"name":"Hamilton Lodge","docs":{"0":{"title":"Can I cook?","body":"No."}}},
                         "*": {"docs":{"0":{"title":"Can I cancel?","body":"Yes."}}}}})");
        REQUIRE(kb.size() == 2);
        const auto named = kb.find({"hotel", "1", "0"});
        REQUIRE(named);
        CHECK(kb[*named].entity_name == "Hamilton Lodge");
        const auto dom = kb.find({"hotel", kDomainLevel, "0"});
        REQUIRE(dom);
        CHECK(kb[*dom].entity_name == "hotel");
        CHECK(kb[*dom].is_domain_level());
    }

    TEST_CASE("snippet count is entities times documents and the index covers each once") {
        for (int e : {1, 3, 7})
            for (int d : {1, 2, 5}) {
                nlohmann::json j;
                for (int i = 0; i < e; ++i) {
                    j["taxi"][std::to_string(i)]["name"] = "Cab " + std::to_string(i);
                    for (int k = 0; k < d; ++k)
                        j["taxi"][std::to_string(i)]["docs"][std::to_string(k)] = {{"title", "q"}, {"body", "a"}};
                }
                const auto kb = parse_knowledge_base(j.dump());
                CHECK(kb.size() == static_cast<std::size_t>(e * d));
                std::multiset<std::size_t> covered;
                for (const auto& ent : kb.entities())
                    for (auto i : kb.snippets_of(ent.domain, ent.entity_id)) covered.insert(i);
                CHECK(covered.size() == kb.size());
                CHECK(std::set<std::size_t>(covered.begin(), covered.end()).size() == kb.size());
            }
    }

    TEST_CASE("history linearization and left truncation") {
        CHECK(linearize_history(three_turns(), 100) == "<user> hi <sys> hello <user> thanks");
        CHECK(linearize_history(three_turns(), 4) == "<sys> hello <user> thanks");
        CHECK(parse_history(linearize_turns(three_turns().turns)).size() == 3);
    }

    TEST_CASE("knowledge linearization round trip") {
        KnowledgeSnippet s{"hotel", "1", "Hamilton Lodge", "Can I cook?", "No.", "0"};
        CHECK(linearize_knowledge(s) == "<kng> Can I cook? <ans> No.");
        s.answer = "";
        CHECK(linearize_knowledge(s) == "<kng> Can I cook? <ans>");
        s.answer = "Only in the shared kitchen.";
        const auto [q, a] = parse_knowledge(linearize_knowledge(s));
        CHECK(q == s.question);
        CHECK(a == s.answer);
    }

    TEST_CASE("generation context puts the best snippet next to the last user turn") {
        Dialogue d = three_turns();
        KnowledgeSnippet k1{"hotel", "1", "Lodge One", "q1", "a1", "0"};
        KnowledgeSnippet k2{"hotel", "2", "Lodge Two", "q2", "a2", "0"};
        const auto one = build_generation_context(d, {k1}, 512);
        CHECK(one.text.find("<kng_1> <ent> Lodge One <ans> a1 <user> thanks") != std::string::npos);
        const auto two = build_generation_context(d, {k1, k2}, 512);
        CHECK(two.text.find("Lodge Two") < two.text.find("Lodge One"));
    }

    TEST_CASE("generation context never exceeds the token budget") {
        Rng rng(3);
        for (int trial = 0; trial < 200; ++trial) {
            Dialogue d{"r", {}, std::nullopt};
            const auto turns = 1 + 2 * rng.uniform_index(5);
            for (std::size_t t = 0; t < turns; ++t) {
                std::string u;
                for (std::size_t w = 0, n = 1 + rng.uniform_index(12); w < n; ++w) u += "w" + std::to_string(rng.uniform_index(50)) + " ";
                d.turns.push_back({t % 2 == 0 ? Speaker::User : Speaker::System, u});
            }
            std::vector<KnowledgeSnippet> top;
            for (std::size_t k = 0, n = rng.uniform_index(6); k < n; ++k)
                top.push_back({"hotel", std::to_string(k), "Name " + std::to_string(k), "question words", "answer words here", "0"});
            const std::size_t budget = 8 + rng.uniform_index(60);
            const auto ctx = build_generation_context(d, top, budget);
            CHECK(budget_tokens(ctx.text) <= budget);
        }
    }

    TEST_CASE("k-fold splits") {
        const auto ten = split_kfold(10, 10, 1);
        CHECK(ten.size() == 10);
        for (const auto& f : ten) CHECK(f.size() == 1);
        const auto seven = split_kfold(7, 3, 1);
        std::multiset<std::size_t> sizes;
        std::set<std::size_t> all;
        for (const auto& f : seven) {
            sizes.insert(f.size());
            all.insert(f.begin(), f.end());
        }
        CHECK(sizes == std::multiset<std::size_t>{2, 2, 3});
        CHECK(all.size() == 7);
        CHECK(split_kfold(7, 3, 9) == split_kfold(7, 3, 9));
    }
}
