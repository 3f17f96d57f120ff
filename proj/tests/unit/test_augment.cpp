#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "kgd/augment.hpp"
#include "kgd/synthetic.hpp"
#include "kgd/text.hpp"

using namespace kgd;

namespace {

const char* kToyLexicon =
    "cooking\tK UH1 K IH0 NG\n"
    "booking\tB UH1 K IH0 NG\n"
    "lodge\tL AA1 JH\n"
    "launch\tL AO1 N CH\n"
    "zebra\tZ IY1 B R AH0\n"
    "can\tK AE1 N\n"
    "i\tAY1\n"
    "at\tAE1 T\n"
    "hamilton\tHH AE1 M AH0 L T AH0 N\n";

Dialogue one_turn(const std::string& text) { return {"t", {{Speaker::User, text}}, std::nullopt}; }

}  // namespace

TEST_SUITE("augment") {
    TEST_CASE("lexicon parsing ignores stress and round trips") {
        const auto lex = parse_lexicon(kToyLexicon);
        CHECK(lex.at("lodge") == std::vector<std::string>{"L", "AA", "JH"});
        CHECK(parse_lexicon(lexicon_to_text(lex)) == lex);
    }

    TEST_CASE("phonetic distances follow shared sound structure") {
        const auto index = PhoneticIndex::build(parse_lexicon(kToyLexicon));
        CHECK(index.size() == 9);
        CHECK(index.angular_distance("lodge", "launch") < index.angular_distance("lodge", "zebra"));
        const auto same = PhoneticIndex::build(parse_lexicon("read\tR EH D\nred\tR EH D\n"));
        CHECK(same.angular_distance("read", "red") == doctest::Approx(0.0).epsilon(1e-12));
    }

    TEST_CASE("neighbor queries") {
        const auto index = PhoneticIndex::build(parse_lexicon(kToyLexicon));
        CHECK(index.neighbor_words("cooking", 1) == std::vector<std::string>{"booking"});
        const auto single = PhoneticIndex::build(parse_lexicon("lodge\tL AA JH\n"));
        CHECK(single.size() == 1);
        CHECK(single.neighbors("lodge", 5).empty());
        const auto lonely = PhoneticIndex::build(parse_lexicon("lodge\tL AA JH\nzebra\tZ IY B R AH\n"));
        CHECK(lonely.neighbors("zebra", 3).empty());
    }

    TEST_CASE("returned neighbors are sorted by recomputed distance") {
        const auto index = PhoneticIndex::build(synthetic::random_lexicon(800, 5));
        for (std::size_t q = 0; q < 50; ++q) {
            const auto& w = index.vocabulary()[q * 13 % index.size()];
            const auto n = index.neighbors(w, 10);
            for (std::size_t i = 0; i < n.size(); ++i) {
                CHECK(n[i].distance == doctest::Approx(index.angular_distance(w, n[i].word)).epsilon(1e-9));
                if (i) CHECK(n[i - 1].distance <= n[i].distance + 1e-12);
                CHECK(n[i].word != w);
            }
        }
    }

    TEST_CASE("error injection reproduces the example row") {
        const auto index = PhoneticIndex::build(parse_lexicon(kToyLexicon));
        AugmentConfig cfg;
        cfg.neighbor_k = 1;
        bool found = false;
        for (std::uint64_t seed = 0; seed < 2000 && !found; ++seed) {
            Rng rng(seed);
            found = inject_errors("can I cooking at Hamilton lodge", index, cfg, rng) == "can I booking at Hamilton launch";
        }
        CHECK(found);
    }

    TEST_CASE("replacement count is the ceiling of rate times words and replacements are neighbors") {
        const auto lex = synthetic::random_lexicon(300, 8);
        const auto index = PhoneticIndex::build(lex);
        std::vector<std::string> vocab;
        for (const auto& [w, p] : lex) vocab.push_back(w);
        AugmentConfig cfg;
        Rng rng(21);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(15);
            std::vector<std::string> words;
            for (std::size_t i = 0; i < n; ++i) words.push_back(vocab[rng.uniform_index(vocab.size())]);
            std::string utt;
            for (const auto& w : words) utt += (utt.empty() ? "" : " ") + w;
            const auto r = inject_errors_detailed(utt, index, cfg, rng);
            CHECK(r.rate >= 0.1);
            CHECK(r.rate <= 0.3);
            CHECK(r.positions.size() == static_cast<std::size_t>(std::ceil(r.rate * static_cast<double>(n) - 1e-9)));
            const auto out = text::split_whitespace(r.text);
            REQUIRE(out.size() == n);
            std::set<std::size_t> pos(r.positions.begin(), r.positions.end());
            for (std::size_t i = 0; i < n; ++i) {
                if (!pos.count(i)) {
                    CHECK(out[i] == words[i]);
                } else if (out[i] != words[i]) {
                    const auto allowed = index.neighbor_words(words[i], cfg.neighbor_k);
                    CHECK(std::find(allowed.begin(), allowed.end(), out[i]) != allowed.end());
                }
            }
        }
    }

    TEST_CASE("a single word gets exactly one replacement attempt") {
        const auto index = PhoneticIndex::build(parse_lexicon(kToyLexicon));
        Rng rng(1);
        CHECK(inject_errors_detailed("cooking", index, {}, rng).positions.size() == 1);
    }

    TEST_CASE("speech round trip fake reproduces the example row") {
        auto fake = ConfusionTableRoundTrip::from_text(synthetic::fake_confusion_table());
        CHECK(tst_transform("can I cooking at Hamilton lodge", fake) == "can I cooking and high museum large");
        IdentityRoundTrip id;
        CHECK(tst_transform("can I cooking at Hamilton lodge", id) == "can I cooking at Hamilton lodge");
    }

    TEST_CASE("a failing adapter reports the original utterance") {
        CommandRoundTrip broken("exit 3");
        try {
            tst_transform("can I cooking", broken);
            FAIL("expected an error");
        } catch (const TstError& e) {
            CHECK(e.utterance() == "can I cooking");
        }
    }

    TEST_CASE("entity name augmentation primitives reproduce the example rows") {
        const auto d = one_turn("can I cooking at Hamilton lodge");
        const auto mentions = find_entity_mentions(d, "Hamilton Lodge");
        REQUIRE(mentions.size() == 1);
        CHECK(mentions[0].start == 4);
        CHECK(mentions[0].length == 2);
        const auto pos = move_entity_part(d, mentions[0], 1, true, {0, 3});
        CHECK(pos.turns[0].text == "can I cooking lodge at Hamilton");
        const auto neg = insert_words(d, "SW Hotel", {0, 2});
        CHECK(neg.turns[0].text == "can I SW Hotel cooking at Hamilton lodge");
    }

    TEST_CASE("randomized entity name augmentation reaches the example rows") {
        const auto d = one_turn("can I cooking at Hamilton lodge");
        KnowledgeSnippet gt{"hotel", "1", "Hamilton Lodge", "q", "a", "0"};
        KnowledgeSnippet other{"hotel", "2", "SW Hotel", "q", "a", "0"};
        AugmentConfig cfg;
        cfg.ena_probability = 1.0;
        cfg.ena_delete_prob = 0.0;
        bool pos = false, neg = false;
        for (std::uint64_t seed = 0; seed < 500; ++seed) {
            Rng r1(seed), r2(seed);
            pos = pos || augment_entity_name(d, gt, true, cfg, r1).turns[0].text == "can I cooking lodge at Hamilton";
            neg = neg || augment_entity_name(d, other, false, cfg, r2).turns[0].text == "can I SW Hotel cooking at Hamilton lodge";
        }
        CHECK(pos);
        CHECK(neg);
    }

    TEST_CASE("zero augmentation probability leaves the dialogue unchanged") {
        const auto d = one_turn("can I cooking at Hamilton lodge");
        KnowledgeSnippet gt{"hotel", "1", "Hamilton Lodge", "q", "a", "0"};
        AugmentConfig cfg;
        cfg.ena_probability = 0.0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(seed);
            CHECK(augment_entity_name(d, gt, true, cfg, rng).turns[0].text == d.turns[0].text);
        }
    }

    TEST_CASE("invalid rates are rejected") {
        AugmentConfig cfg;
        cfg.replace_rate_low = 0.5;
        cfg.replace_rate_high = 0.2;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = {};
        cfg.ena_probability = 1.5;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }

    TEST_CASE("offline augmentation counts and determinism") {
        synthetic::MiniCorpusConfig mc;
        mc.dialogues = 100;
        mc.test_fraction = 0.0;
        const auto kb = synthetic::mini_knowledge_base();
        const auto corpus = synthetic::mini_dialogues(kb, mc);
        REQUIRE(corpus.size() == 100);
        const auto index = PhoneticIndex::build(synthetic::corpus_lexicon(corpus, kb));
        auto fake = ConfusionTableRoundTrip::from_text(synthetic::fake_confusion_table());
        AugmentConfig cfg;
        CHECK(augment_corpus(corpus, index, cfg, nullptr, {true, false}).size() == 200);
        CHECK(augment_corpus(corpus, index, cfg, &fake, {true, true}).size() == 300);
        const auto a = augment_corpus(corpus, index, cfg, nullptr, {true, false});
        const auto b = augment_corpus(corpus, index, cfg, nullptr, {true, false});
        CHECK(logs_to_json(a) == logs_to_json(b));
        CHECK(labels_to_json(a) == labels_to_json(b));
    }
}
