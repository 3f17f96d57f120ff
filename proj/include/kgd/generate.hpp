#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kgd/corpus.hpp"
#include "kgd/encoder.hpp"
#include "kgd/models.hpp"
#include "kgd/params.hpp"
#include "kgd/rank.hpp"
#include "kgd/random.hpp"

namespace kgd {

// Sentences split after ".", "!" or "?" followed by whitespace.
std::vector<std::string> split_sentences(const std::string& text);

// Trailing "?" sentences whose whitespace-normalized form occurs at least
// min_count times, most frequent first (ties alphabetical).
std::vector<std::string> mine_frequent_interrogatives(const std::vector<std::string>& responses,
                                                      std::size_t min_count = 20);
// Strips listed sentences from the end of a response, repeatedly, unless
// that would leave it empty.
std::string strip_interrogatives(const std::string& response, const std::vector<std::string>& interrogatives);
Corpus preprocess_responses(const Corpus& corpus, const std::vector<std::string>& interrogatives);

struct GenTrainConfig {
    int epochs = 6;
    int batch_size = 32;
    double learning_rate = 1e-5;
    double weight_decay = 0.01;
    std::size_t max_history_tokens = 512;
    std::size_t max_target_tokens = 96;
    double p_s = 0.15;
    std::size_t k_folds = 10;
    std::uint64_t seed = 0;
    int hidden = 32;
    KnowledgeBlockFormat format = KnowledgeBlockFormat::EntityAnswer;
    EncoderConfig encoder;

    void validate() const;
    nlohmann::json to_json() const;
    static GenTrainConfig from_json(const nlohmann::json& j);
};

enum class BlockSource { Selected, Distractor };

struct GenExample {
    std::string dialogue_id;
    std::string context;
    std::string target;  // "<resp> S_i"
    std::vector<KnowledgeRef> knowledge;  // best first, as placed in the context
    std::vector<BlockSource> provenance;  // parallel to knowledge
    bool substituted = false;
};

// Response text of a target ("<resp> ..." with the tag removed).
std::string target_response(const std::string& target);

// Generation examples from system selection outputs. With probability p_s the
// ground-truth snippet, when present in the top list, is swapped for a
// distractor from the turn's candidates outside that list (or from the rest
// of the knowledge base when there are none).
std::vector<GenExample> build_gen_examples(const Corpus& corpus, const KnowledgeBase& kb,
                                           const std::map<std::string, RankedList>& selection,
                                           const GenTrainConfig& config, Rng& rng,
                                           const CandidateFn& candidates = nullptr);

// Inference-time context (no substitution).
GenExample make_gen_context(const Dialogue& dialogue, const KnowledgeBase& kb, const RankedList& selection,
                            const GenTrainConfig& config);

// Word-level encoder-decoder: toy encoder over the context, tanh recurrent
// decoder with dot-product attention over the encoder states.
class ToyGenerator : public Generator {
public:
    static constexpr const char* kEos = "</s>";

    ToyGenerator(Vocabulary source, Vocabulary target, GenTrainConfig config);

    std::vector<Hypothesis> generate_nbest(const std::string& context, std::size_t n) const override;
    std::string greedy(const std::string& context) const;

    // Summed token cross-entropy of the target (EOS included).
    ad::Var loss(ad::Tape& tape, const std::string& context, const std::string& target) const;
    std::vector<std::string> target_tokens(const std::string& target) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const GenTrainConfig& config() const { return config_; }

    void save(const std::filesystem::path& path) const;
    static ToyGenerator load(const std::filesystem::path& path);

    // Per-epoch mean per-token perplexity, filled by train_generator.
    std::vector<double> epoch_perplexity;

private:
    struct Encoded {
        ad::Var states;  // T x h
        ad::Var init;    // 1 x h
    };
    Encoded encode_context(ad::Tape& tape, const std::string& context) const;
    // One decoder step: returns (new state, log-probabilities row).
    std::pair<ad::Var, ad::Var> step(ad::Tape& tape, const Encoded& enc, ad::Var state, int token) const;

    Vocabulary source_;
    Vocabulary target_;
    GenTrainConfig config_;
    ToyEncoder encoder_;
    mutable ParamStore params_;
};

ToyGenerator train_generator(const std::vector<GenExample>& examples, const GenTrainConfig& config);

std::vector<Hypothesis> decode_nbest(const Generator& generator, const std::string& context, std::size_t n);

}  // namespace kgd
