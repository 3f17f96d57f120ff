#include "kgd/synthetic.hpp"

#include <array>
#include <cctype>
#include <stdexcept>
#include <set>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <utility>

#include "kgd/random.hpp"
#include "kgd/text.hpp"

namespace kgd::synthetic {

namespace {

const std::vector<std::pair<std::string, std::vector<std::string>>>& rules() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> r = {
        {"tch", {"CH"}}, {"igh", {"AY"}}, {"ch", {"CH"}}, {"sh", {"SH"}}, {"th", {"TH"}}, {"ph", {"F"}},
        {"ng", {"NG"}},  {"ck", {"K"}},   {"qu", {"K", "W"}}, {"wh", {"W"}}, {"oo", {"UW"}}, {"ee", {"IY"}},
        {"ea", {"IY"}},  {"ou", {"AW"}},  {"ow", {"OW"}}, {"ai", {"EY"}}, {"ay", {"EY"}}, {"oa", {"OW"}},
        {"oi", {"OY"}},  {"oy", {"OY"}},  {"au", {"AO"}}, {"aw", {"AO"}}, {"er", {"ER"}}, {"ir", {"ER"}},
        {"ur", {"ER"}},  {"ar", {"AA", "R"}}, {"or", {"AO", "R"}},
        {"a", {"AE"}}, {"b", {"B"}}, {"c", {"K"}},  {"d", {"D"}},  {"e", {"EH"}}, {"f", {"F"}},  {"g", {"G"}},
        {"h", {"HH"}}, {"i", {"IH"}}, {"j", {"JH"}}, {"k", {"K"}}, {"l", {"L"}},  {"m", {"M"}},  {"n", {"N"}},
        {"o", {"AA"}}, {"p", {"P"}}, {"q", {"K"}},  {"r", {"R"}},  {"s", {"S"}},  {"t", {"T"}},  {"u", {"AH"}},
        {"v", {"V"}},  {"w", {"W"}}, {"x", {"K", "S"}}, {"y", {"IY"}}, {"z", {"Z"}},
        {"0", {"Z", "IH", "R", "OW"}}, {"1", {"W", "AH", "N"}}, {"2", {"T", "UW"}}, {"3", {"TH", "R", "IY"}},
        {"4", {"F", "AO", "R"}}, {"5", {"F", "AY", "V"}}, {"6", {"S", "IH", "K", "S"}}, {"7", {"S", "EH", "V", "AH", "N"}},
        {"8", {"EY", "T"}}, {"9", {"N", "AY", "N"}},
    };
    return r;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y'; }

}  // namespace

std::vector<std::string> letter_to_sound(const std::string& word) {
    std::string w;
    for (char c : text::lowercase(word))
        if (std::isalnum(static_cast<unsigned char>(c))) w.push_back(c);
    if (w.size() > 2 && w.back() == 'e' && !is_vowel(w[w.size() - 2])) w.pop_back();
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < w.size()) {
        if (i > 0 && w[i] == w[i - 1] && !is_vowel(w[i])) {
            ++i;
            continue;
        }
        bool matched = false;
        for (const auto& [pat, phones] : rules()) {
            if (w.compare(i, pat.size(), pat) == 0) {
                out.insert(out.end(), phones.begin(), phones.end());
                i += pat.size();
                matched = true;
                break;
            }
        }
        if (!matched) ++i;
    }
    return out;
}

Lexicon lexicon_for(const std::vector<std::string>& words) {
    Lexicon lex;
    for (const auto& w : words) {
        for (const auto& tok : text::word_tokens(w)) {
            auto phones = letter_to_sound(tok);
            if (!phones.empty()) lex.emplace(tok, std::move(phones));
        }
    }
    return lex;
}

Lexicon random_lexicon(std::size_t n, std::uint64_t seed) {
    static const std::array<const char*, 22> onsets = {"b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n",
                                                       "p", "r", "s", "t", "v", "w", "ch", "sh", "th", "br", "st"};
    static const std::array<const char*, 12> vowels = {"a", "e", "i", "o", "u", "ai", "ee", "oo", "ou", "oa", "ay", "oi"};
    static const std::array<const char*, 12> codas = {"", "", "", "n", "t", "ck", "ng", "m", "s", "l", "rd", "sh"};
    Rng rng(seed);
    std::set<std::string> seen;
    Lexicon lex;
    std::size_t attempts = 0;
    while (lex.size() < n) {
        if (++attempts > 100 * n + 1000) throw std::runtime_error("could not draw enough distinct pseudo-words");
        const std::size_t syll = 1 + rng.uniform_index(3);
        std::string w;
        for (std::size_t s = 0; s < syll; ++s) {
            w += onsets[rng.uniform_index(onsets.size())];
            w += vowels[rng.uniform_index(vowels.size())];
            w += codas[rng.uniform_index(codas.size())];
        }
        if (!seen.insert(w).second) continue;
        lex.emplace(w, letter_to_sound(w));
    }
    return lex;
}

}  // namespace kgd::synthetic

namespace kgd::synthetic {

namespace {

struct Topic {
    std::string question;  // "{e}" is replaced by the entity name
    std::string yes;
    std::string no;
    std::vector<std::string> asks;  // user phrasings; "{r}" is the reference
};

struct DomainSpec {
    std::string name;
    std::vector<std::string> entities;
    std::vector<Topic> topics;
    std::vector<Topic> general;  // domain-level
    std::vector<std::string> openers;
    std::vector<std::string> closers;  // non-knowledge final turns
    std::string follow_up;
};

const std::vector<DomainSpec>& specs() {
    static const std::vector<DomainSpec> s = {
        {"hotel",
         {"Hamilton Lodge", "Alpha Guesthouse", "Avalon Inn", "Bridge House", "Carlton Hotel", "Acorn Lodge",
          "Riverside Suites", "Warkworth House", "Lensfield Hotel"},
         {{"Are pets allowed at {e}?", "Yes, pets are welcome at {e}.", "No, pets are not allowed at {e}.",
           {"can I bring my dog to {r}?", "are pets allowed at {r}?", "is {r} fine with pets?"}},
          {"Is there parking at {e}?", "Yes, {e} has free parking.", "No, {e} has no parking.",
           {"is there parking at {r}?", "can I park my car at {r}?", "does {r} offer parking?"}},
          {"Does {e} have wifi?", "Yes, {e} offers free wifi.", "No, {e} has no wifi.",
           {"does {r} have wifi?", "is there internet at {r}?", "can I get wifi at {r}?"}},
          {"Is breakfast included at {e}?", "Yes, breakfast is included at {e}.", "No, breakfast costs extra at {e}.",
           {"is breakfast included at {r}?", "do they serve breakfast at {r}?", "does {r} include breakfast?"}},
          {"Can I cook at {e}?", "Yes, {e} has a shared kitchen for cooking.", "No, cooking is not allowed at {e}.",
           {"can I cook at {r}?", "can I do some cooking at {r}?", "is there a kitchen for cooking at {r}?"}}},
         {{"How do I cancel a hotel booking?", "You can cancel a hotel booking online for free.", "",
           {"how do I cancel a hotel booking?", "can I cancel my hotel booking?"}},
          {"Is there a fee for booking a hotel?", "There is no fee for booking a hotel.", "",
           {"is there a fee for booking a hotel?", "do you charge a hotel booking fee?"}},
          {"What time is check in at hotels?", "Hotel check in starts at 3 pm.", "",
           {"what time is hotel check in?", "when can I check in to the hotel?"}},
          {"Do hotels need a credit card?", "Hotels need a credit card to hold a room.", "",
           {"do I need a credit card for the hotel?", "does the hotel need my credit card?"}},
          {"Can I change my hotel reservation?", "Hotel reservations can be changed up to a day before.", "",
           {"can I change my hotel reservation?", "is it possible to change the hotel reservation?"}}},
         {"I need a hotel in the north.", "I am looking for a place to stay.", "Can you find me a cheap hotel?",
          "I want a hotel with 4 stars."},
         {"Please book {r} for 3 nights.", "Book a room at {r} for 2 people.", "I will take {r}, thanks."},
         "Would you like to book a room?"},
        {"restaurant",
         {"Golden Wok", "Curry Garden", "Saffron Brasserie", "Midsummer House", "Rice Boat", "Cote Bistro",
          "Kymmoy Kitchen", "Meze Bar", "Royal Spice"},
         {{"Does {e} have vegan options?", "Yes, {e} has vegan options.", "No, {e} has no vegan options.",
           {"does {r} have vegan options?", "can I get vegan food at {r}?", "is there anything vegan at {r}?"}},
          {"Is there outdoor seating at {e}?", "Yes, {e} has outdoor seating.", "No, {e} has no outdoor seating.",
           {"is there outdoor seating at {r}?", "can we sit outside at {r}?", "does {r} have seating outdoors?"}},
          {"Does {e} offer takeaway?", "Yes, {e} offers takeaway.", "No, {e} does not offer takeaway.",
           {"does {r} offer takeaway?", "can I order takeaway from {r}?", "is takeaway possible at {r}?"}},
          {"Do I need a reservation at {e}?", "Yes, {e} needs a reservation.", "No, {e} takes walk ins.",
           {"do I need a reservation at {r}?", "should I make a reservation at {r}?", "does {r} take walk ins?"}},
          {"Does {e} serve alcohol?", "Yes, {e} serves beer and wine.", "No, {e} does not serve alcohol.",
           {"does {r} serve alcohol?", "can I get a beer at {r}?", "is there wine at {r}?"}}},
         {{"Can I cancel a restaurant reservation?", "Restaurant reservations can be cancelled by phone.", "",
           {"can I cancel a restaurant reservation?", "how do I cancel my restaurant reservation?"}},
          {"Is there a deposit for restaurant bookings?", "Restaurant bookings need no deposit.", "",
           {"is there a deposit for the restaurant booking?", "do restaurant bookings need a deposit?"}},
          {"How large can a restaurant group be?", "A restaurant group can have up to 12 people.", "",
           {"how large can a restaurant group be?", "can I book the restaurant for a big group?"}},
          {"Are restaurant tips included?", "Tips are not included at the restaurant.", "",
           {"are tips included at the restaurant?", "should I tip at the restaurant?"}},
          {"Can I bring children to a restaurant?", "Children are welcome at every restaurant.", "",
           {"can I bring children to the restaurant?", "is the restaurant good for children?"}}},
         {"I need a restaurant in the centre.", "I am looking for a place to eat.", "Can you find me a cheap restaurant?",
          "I want an expensive restaurant."},
         {"Please book {r} for 4 people.", "Book a table at {r} at 7 pm.", "I will go with {r}, thanks."},
         "Would you like to make a reservation?"},
        {"attraction",
         {"Castle Galleries", "Kettle Yard", "Botanic Garden", "Abbey Pool", "Scott Polar Museum", "Jesus Green Lido",
          "Holy Trinity Church", "Cherry Hinton Park", "Whipple Museum"},
         {{"Is {e} wheelchair accessible?", "Yes, {e} is wheelchair accessible.", "No, {e} is not wheelchair accessible.",
           {"is {r} wheelchair accessible?", "can I visit {r} in a wheelchair?", "does {r} have wheelchair access?"}},
          {"Can I take photos at {e}?", "Yes, photos are allowed at {e}.", "No, photos are not allowed at {e}.",
           {"can I take photos at {r}?", "is photography allowed at {r}?", "may I take pictures at {r}?"}},
          {"Does {e} offer guided tours?", "Yes, {e} offers guided tours.", "No, {e} has no guided tours.",
           {"does {r} offer guided tours?", "is there a guided tour at {r}?", "can I join a tour at {r}?"}},
          {"Is there a gift shop at {e}?", "Yes, {e} has a gift shop.", "No, {e} has no gift shop.",
           {"is there a gift shop at {r}?", "can I buy gifts at {r}?", "does {r} have a shop?"}},
          {"Can I eat food at {e}?", "Yes, food is allowed at {e}.", "No, food is not allowed at {e}.",
           {"can I eat food at {r}?", "can I bring food into {r}?", "is there a cafe with food at {r}?"}}},
         {{"Do attractions offer student discounts?", "Most attractions offer student discounts.", "",
           {"do attractions offer student discounts?", "is there a student discount for attractions?"}},
          {"Are attractions open on holidays?", "Attractions are open on most holidays.", "",
           {"are attractions open on holidays?", "is the attraction open on a holiday?"}},
          {"Can I buy attraction tickets online?", "Attraction tickets can be bought online.", "",
           {"can I buy attraction tickets online?", "are attraction tickets sold online?"}},
          {"Do attractions have lockers?", "Attractions have lockers near the entrance.", "",
           {"do attractions have lockers?", "is there a locker at the attraction?"}},
          {"Are dogs allowed at attractions?", "Only guide dogs are allowed at attractions.", "",
           {"are dogs allowed at the attraction?", "can I bring my dog to an attraction?"}}},
         {"I want to see an attraction in town.", "I am looking for something to do.", "Can you find me an attraction?",
          "Is there a fun attraction nearby?"},
         {"What is the address of {r}?", "How much is the entrance fee for {r}?", "I will visit {r}, thanks."},
         "Is there anything else I can help you with?"},
    };
    return s;
}

std::string fill(std::string s, const std::string& key, const std::string& value) {
    for (std::size_t p = s.find(key); p != std::string::npos; p = s.find(key, p + value.size()))
        s.replace(p, key.size(), value);
    return s;
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[rng.uniform_index(v.size())];
}

}  // namespace

KnowledgeBase mini_knowledge_base() {
    std::vector<KnowledgeSnippet> snippets;
    Rng rng(0x6b62);
    for (const auto& d : specs()) {
        for (std::size_t e = 0; e < d.entities.size(); ++e) {
            const auto& name = d.entities[e];
            for (std::size_t t = 0; t < d.topics.size(); ++t) {
                const auto& topic = d.topics[t];
                const bool yes = rng.bernoulli(0.5);
                snippets.push_back({d.name, std::to_string(e + 1), name, fill(topic.question, "{e}", name),
                                    fill(yes ? topic.yes : topic.no, "{e}", name), std::to_string(t)});
            }
        }
        for (std::size_t t = 0; t < d.general.size(); ++t)
            snippets.push_back({d.name, kDomainLevel, d.name, d.general[t].question, d.general[t].yes,
                                std::to_string(t)});
    }
    return KnowledgeBase(std::move(snippets));
}

Corpus mini_dialogues(const KnowledgeBase& kb, const MiniCorpusConfig& config) {
    Rng rng(text::mix_seed(config.seed, "mini-dialogues"));
    Corpus corpus;
    for (std::size_t i = 0; i < config.dialogues; ++i) {
        const auto& d = specs()[rng.uniform_index(specs().size())];
        const std::size_t gt = rng.uniform_index(d.entities.size());
        std::size_t other = rng.uniform_index(d.entities.size() - 1);
        if (other >= gt) ++other;
        const auto& name = d.entities[gt];
        const auto& other_name = d.entities[other];

        Dialogue dlg;
        char id[16];
        std::snprintf(id, sizeof id, "mini-%04zu", i);
        dlg.id = id;
        auto say = [&](Speaker s, const std::string& t) { dlg.turns.push_back({s, t}); };
        say(Speaker::User, pick(d.openers, rng));
        // Sometimes a second entity is offered; it is mentioned first or last.
        const bool two = rng.bernoulli(0.4);
        const bool gt_last = rng.bernoulli(0.5);
        if (two) {
            const auto& a = gt_last ? other_name : name;
            const auto& b = gt_last ? name : other_name;
            say(Speaker::System, "I have " + a + " and " + b + ". Which one do you prefer?");
        } else {
            say(Speaker::System, name + " is a great option.");
        }
        if (rng.bernoulli(0.3)) {
            say(Speaker::User, "Tell me more about " + name + ".");
            say(Speaker::System, name + " is popular and in a nice area.");
        }

        TurnLabel label;
        if (rng.bernoulli(config.knowledge_seeking_rate)) {
            label.is_knowledge_seeking = true;
            std::string ask;
            KnowledgeRef ref;
            if (rng.bernoulli(config.domain_level_rate)) {
                const std::size_t t = rng.uniform_index(d.general.size());
                ask = pick(d.general[t].asks, rng);
                ref = {d.name, kDomainLevel, std::to_string(t)};
            } else {
                const std::size_t t = rng.uniform_index(d.topics.size());
                const double how = rng.uniform();
                std::string reference = name;
                if (how >= 0.6 && how < 0.85 && !two)
                    reference = "it";
                else if (how >= 0.85)
                    reference = "the " + text::split_whitespace(name).front();
                ask = fill(pick(d.topics[t].asks, rng), "{r}", reference);
                ref = {d.name, std::to_string(gt + 1), std::to_string(t)};
            }
            say(Speaker::User, capitalize(ask));
            const auto idx = kb.find(ref);
            std::string response = kb[*idx].answer;
            if (rng.bernoulli(config.interrogative_rate)) response += " " + d.follow_up;
            label.knowledge_refs.push_back(ref);
            label.response = response;
        } else {
            say(Speaker::User, capitalize(fill(pick(d.closers, rng), "{r}", name)));
        }
        dlg.label = label;
        corpus.push_back(std::move(dlg));
    }
    return corpus;
}

Lexicon corpus_lexicon(const Corpus& corpus, const KnowledgeBase& kb) {
    std::vector<std::string> texts;
    for (const auto& d : corpus)
        for (const auto& t : d.turns) texts.push_back(t.text);
    for (const auto& s : kb.snippets()) {
        texts.push_back(s.entity_name);
        texts.push_back(s.question);
        texts.push_back(s.answer);
    }
    return lexicon_for(texts);
}

Corpus noisy_copy(const Corpus& corpus, const KnowledgeBase& kb, const PhoneticIndex& index,
                  const AugmentConfig& config, std::uint64_t seed) {
    Corpus out;
    for (const auto& d : corpus) {
        Rng rng(text::mix_seed(seed, d.id + "#noisy"));
        Dialogue n = d;
        for (auto& t : n.turns)
            if (t.speaker == Speaker::User) t.text = inject_errors(t.text, index, config, rng);
        if (d.label && !d.label->knowledge_refs.empty()) {
            const auto& ref = d.label->knowledge_refs.front();
            if (!ref.is_domain_level())
                if (auto idx = kb.find(ref)) n = augment_entity_name(n, kb[*idx], true, config, rng);
        }
        out.push_back(std::move(n));
    }
    return out;
}

MiniCorpus make_mini_corpus(const MiniCorpusConfig& config) {
    config.noise.validate();
    MiniCorpus mc;
    mc.kb = mini_knowledge_base();
    const Corpus all = mini_dialogues(mc.kb, config);
    const auto n_test = static_cast<std::size_t>(std::lround(config.test_fraction * static_cast<double>(all.size())));
    mc.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_test));
    mc.test.assign(all.end() - static_cast<std::ptrdiff_t>(n_test), all.end());
    mc.lexicon = corpus_lexicon(all, mc.kb);
    const auto index = PhoneticIndex::build(mc.lexicon, LshConfig{});
    mc.noisy_test = noisy_copy(mc.test, mc.kb, index, config.noise, config.seed);
    return mc;
}

std::string fake_confusion_table() {
    return "at hamilton lodge\tand high museum large\n";
}

namespace {

// Settings that let the whole pipeline train in seconds on the mini corpus.
const char* const kToyOverrides = R"(
encoder.dim = 16
encoder.max_positions = 128
detect.epochs = 4
detect.learning_rate = 1e-2
detect.max_tokens = 128
track.method = learned
track.epochs = 10
track.learning_rate = 3e-3
rank.epochs = 6
rank.learning_rate = 1e-2
rank.max_history_tokens = 128
rank.kfold = 3
rank.listwise_epochs = 3
rank.listwise_learning_rate = 1e-3
rank.variant = wd
rank.alpha = 1
generate.epochs = 6
generate.learning_rate = 1e-2
generate.max_history_tokens = 128
generate.max_target_tokens = 24
generate.k_folds = 3
generate.hidden = 32
generate.interrogative_min_count = 5
consensus.restarts = 2
consensus.max_rounds = 8
)";

}  // namespace

namespace fs = std::filesystem;

void write_workspace(const std::filesystem::path& dir, std::uint64_t seed, std::size_t dialogues) {
    MiniCorpusConfig c;
    c.seed = seed;
    c.dialogues = dialogues;
    c.noise.seed = seed;
    const auto mini = make_mini_corpus(c);
    fs::create_directories(dir);
    save_corpus(mini.train, dir / "train_logs.json", dir / "train_labels.json");
    save_corpus(mini.test, dir / "test_logs.json", dir / "test_labels.json");
    save_corpus(mini.noisy_test, dir / "noisy_test_logs.json", dir / "noisy_test_labels.json");
    write_file(dir / "knowledge.json", knowledge_to_json(mini.kb));
    write_file(dir / "lexicon.txt", lexicon_to_text(mini.lexicon));
    write_file(dir / "confusion.tsv", fake_confusion_table());
    std::string cfg = "seed = " + std::to_string(seed) + R"(
paths.logs = train_logs.json
paths.labels = train_labels.json
paths.knowledge = knowledge.json
paths.lexicon = lexicon.txt
paths.confusion = confusion.tsv
paths.eval_logs = noisy_test_logs.json
paths.eval_labels = noisy_test_labels.json
paths.output = out
augment.tasks = aei
)";
    write_file(dir / "config.txt", cfg + kToyOverrides);
}


}  // namespace kgd::synthetic
