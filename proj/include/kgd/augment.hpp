#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kgd/corpus.hpp"
#include "kgd/random.hpp"

namespace kgd {

struct AugmentConfig {
    double replace_rate_low = 0.1;
    double replace_rate_high = 0.3;
    double ena_probability = 0.3;
    double ena_delete_prob = 0.1;
    std::size_t neighbor_k = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

// word -> phoneme sequence (CMU style; stress digits are ignored)
using Lexicon = std::map<std::string, std::vector<std::string>>;
Lexicon parse_lexicon(const std::string& content);
Lexicon load_lexicon(const std::filesystem::path& path);
std::string lexicon_to_text(const Lexicon& lexicon);

// (feature id, value) sorted by id
using SparseVector = std::vector<std::pair<int, double>>;
double sparse_dot(const SparseVector& a, const SparseVector& b);

struct LshConfig {
    int tables = 24;
    int bits = 10;
    bool multiprobe = true;
    std::uint64_t seed = 0x5eed;
    // Vocabularies at most this large are searched exhaustively.
    std::size_t exhaustive_below = 512;
};

struct Neighbor {
    std::string word;
    double distance = 0;  // radians
};

// Bag-of-phoneme-bigram embeddings behind a random-hyperplane hash index.
// Words missing from the lexicon are embedded by character bigrams and
// searched against the character-bigram vectors of the vocabulary.
class PhoneticIndex {
public:
    static PhoneticIndex build(const Lexicon& lexicon, const LshConfig& lsh = {});

    // Up to k vocabulary words by ascending angular distance, self excluded.
    // Only words sharing at least one feature with the query qualify.
    std::vector<Neighbor> neighbors(const std::string& word, std::size_t k,
                                    std::size_t* examined = nullptr) const;
    std::vector<Neighbor> exact_neighbors(const std::string& word, std::size_t k) const;
    std::vector<std::string> neighbor_words(const std::string& word, std::size_t k) const;

    double angular_distance(const std::string& a, const std::string& b) const;
    // Unit vector restricted to features the index knows; dot products with
    // stored embeddings are exact cosines.
    SparseVector embed(const std::string& word) const;

    const std::vector<std::string>& vocabulary() const { return vocabulary_; }
    const SparseVector& embedding(std::size_t i) const { return phonetic_.embeddings[i]; }
    std::size_t size() const { return vocabulary_.size(); }
    std::size_t feature_count() const { return phonetic_.features.size(); }
    const LshConfig& lsh_config() const { return lsh_; }

private:
    struct Space {
        std::unordered_map<std::string, int> features;
        std::vector<SparseVector> embeddings;
        std::vector<std::vector<double>> planes;  // tables*bits hyperplanes
        std::vector<std::unordered_map<std::uint32_t, std::vector<std::size_t>>> buckets;

        SparseVector restrict(const std::map<std::string, double>& raw) const;
        std::uint32_t hash_code(const SparseVector& v, std::size_t table, int bits) const;
    };

    bool in_lexicon(const std::string& word) const;
    const Space& space_for(const std::string& word) const;
    void build_space(Space& space, const std::vector<std::map<std::string, double>>& raw);
    std::vector<Neighbor> rank(const std::string& word, const SparseVector& q, const Space& space,
                               const std::vector<std::size_t>& candidates, std::size_t k) const;

    Lexicon lexicon_;
    LshConfig lsh_;
    std::vector<std::string> vocabulary_;
    std::unordered_map<std::string, std::size_t> word_index_;
    Space phonetic_;
    Space spelling_;
};

struct InjectionResult {
    std::string text;
    double rate = 0;
    std::size_t word_count = 0;               // eligible words
    std::vector<std::size_t> positions;       // whitespace-piece indices, ascending
    std::size_t changed = 0;                  // positions whose text actually changed
};

InjectionResult inject_errors_detailed(const std::string& utterance, const PhoneticIndex& index,
                                       const AugmentConfig& config, Rng& rng);
std::string inject_errors(const std::string& utterance, const PhoneticIndex& index,
                          const AugmentConfig& config, Rng& rng);

// Entity name augmentation primitives. Positions are whitespace pieces.
struct EntityMention {
    std::size_t turn = 0;
    std::size_t start = 0;
    std::size_t length = 0;
};
struct WordGap {
    std::size_t turn = 0;
    std::size_t position = 0;  // insert before this piece; == size appends
};

std::vector<EntityMention> find_entity_mentions(const Dialogue& dialogue, const std::string& name);
std::size_t count_word_gaps(const Dialogue& dialogue);
// Removes the head (split words) or tail of the mention and inserts it at `target`,
// which indexes gaps of the dialogue after removal.
Dialogue move_entity_part(const Dialogue& dialogue, const EntityMention& mention, std::size_t split,
                          bool move_tail, WordGap target);
Dialogue insert_words(const Dialogue& dialogue, const std::string& words, WordGap target);

enum class EnaPath { Skipped, Positive, Negative };
struct EnaResult {
    Dialogue dialogue;
    EnaPath path = EnaPath::Skipped;
    bool moved = false;
    std::size_t deleted = 0;
};

EnaResult augment_entity_name_detailed(const Dialogue& dialogue, const KnowledgeSnippet& candidate,
                                       bool is_positive, const AugmentConfig& config, Rng& rng);
Dialogue augment_entity_name(const Dialogue& dialogue, const KnowledgeSnippet& candidate,
                             bool is_positive, const AugmentConfig& config, Rng& rng);

// Speech round trip: text lines in, one transcript line per input out.
class SpeechRoundTrip {
public:
    virtual ~SpeechRoundTrip() = default;
    virtual std::vector<std::string> transcribe(const std::vector<std::string>& lines) = 0;
};

class IdentityRoundTrip : public SpeechRoundTrip {
public:
    std::vector<std::string> transcribe(const std::vector<std::string>& lines) override { return lines; }
};

// Deterministic fake: rewrites phrases from a two-column (TAB) confusion table.
// Matching is case-insensitive on whitespace pieces, longest phrase first.
class ConfusionTableRoundTrip : public SpeechRoundTrip {
public:
    explicit ConfusionTableRoundTrip(std::vector<std::pair<std::string, std::string>> table);
    static ConfusionTableRoundTrip from_text(const std::string& content);
    static ConfusionTableRoundTrip from_file(const std::filesystem::path& path);
    std::vector<std::string> transcribe(const std::vector<std::string>& lines) override;
    std::string apply(const std::string& line) const;

private:
    std::vector<std::pair<std::vector<std::string>, std::string>> table_;
};

// Runs `command` through the shell with input lines on stdin.
class CommandRoundTrip : public SpeechRoundTrip {
public:
    explicit CommandRoundTrip(std::string command) : command_(std::move(command)) {}
    std::vector<std::string> transcribe(const std::vector<std::string>& lines) override;

private:
    std::string command_;
};

class TstError : public std::runtime_error {
public:
    TstError(const std::string& utterance, const std::string& what)
        : std::runtime_error("speech round trip failed for \"" + utterance + "\": " + what),
          utterance_(utterance) {}
    const std::string& utterance() const { return utterance_; }

private:
    std::string utterance_;
};

std::string tst_transform(const std::string& utterance, SpeechRoundTrip& adapter);

struct AugmentTasks {
    bool aei = false;
    bool tst = false;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Originals first, then one AEI copy ("id#aei") and one TST copy ("id#tst")
// per dialogue for each selected task.
Corpus augment_corpus(const Corpus& corpus, const PhoneticIndex& index, const AugmentConfig& config,
                      SpeechRoundTrip* adapter, AugmentTasks tasks);

}  // namespace kgd
