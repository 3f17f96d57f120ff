#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kgd/encoder.hpp"
#include "kgd/params.hpp"

namespace kgd {

// Trainable probability over a sentence pair.
class SentencePairScorer {
public:
    virtual ~SentencePairScorer() = default;
    virtual double score(const std::string& sentence1, const std::string& sentence2) const = 0;
};

struct Hypothesis {
    std::string text;
    double logprob = 0;
};

// Conditional n-best text generator; output sorted by descending logprob.
class Generator {
public:
    virtual ~Generator() = default;
    virtual std::vector<Hypothesis> generate_nbest(const std::string& context, std::size_t n) const = 0;
};

// Encoder input for (sentence1, sentence2) with sentence1 truncated from the
// left to fit, plus the positions of content words of each side. Query words
// are the side-1 content words after its last <user> tag.
struct PairInput {
    EncodedInput encoded;
    std::vector<int> first_words;
    std::vector<int> second_words;
    std::vector<int> query_words;
    // Parameter-free spelling match by best character-trigram cosine:
    // [mean, min] over side-2 words against side 1, then [mean, min] over
    // query words against side 2.
    std::array<double, 4> surface{};
};

bool is_function_word(const std::string& token);
PairInput make_pair_input(const Vocabulary& vocab, const EncoderConfig& config, const std::string& sentence1,
                          const std::string& sentence2);

// Soft lexical match between the two sides: for each content word of side 2,
// a soft max of cosine similarity over side-1 words; returns 1x2
// [soft mean, soft min] over side-2 words (zeros when either side is empty).
ad::Var lexical_alignment(ad::Tape& tape, ad::Var lexical, const PairInput& input, double temperature = 0.1);
// 1x6: lexical_alignment followed by the surface match.
ad::Var pair_alignment(ad::Tape& tape, ad::Var lexical, const PairInput& input);
inline constexpr int kAlignmentFeatures = 6;

// Cosine between boundary-padded character-trigram count vectors.
double trigram_cosine(const std::string& a, const std::string& b);

struct PairTrainConfig {
    int epochs = 10;
    double learning_rate = 1e-5;
    int batch_size = 16;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    EncoderConfig encoder;

    nlohmann::json to_json() const;
    static PairTrainConfig from_json(const nlohmann::json& j);
};

struct PairExample {
    std::string sentence1;
    std::string sentence2;
    bool label = false;
};

// Reference sentence-pair classifier: shared toy encoder over the joint
// input, logit = w.f + u.alignment + b.
class PairClassifier : public SentencePairScorer {
public:
    PairClassifier(Vocabulary vocab, PairTrainConfig config);

    double score(const std::string& sentence1, const std::string& sentence2) const override;
    ad::Var logit(ad::Tape& tape, const std::string& sentence1, const std::string& sentence2) const;
    ad::Var loss(ad::Tape& tape, const PairExample& example) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Vocabulary& vocab() const { return vocab_; }
    const PairTrainConfig& config() const { return config_; }

    void save(const std::filesystem::path& path) const;
    static PairClassifier load(const std::filesystem::path& path);

    // Mean training loss per epoch, filled by train_pair_classifier.
    std::vector<double> epoch_losses;

private:
    Vocabulary vocab_;
    PairTrainConfig config_;
    ToyEncoder encoder_;
    mutable ParamStore params_;
};

PairClassifier train_pair_classifier(const std::vector<PairExample>& examples, const PairTrainConfig& config);

}  // namespace kgd
