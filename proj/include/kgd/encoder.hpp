#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kgd/autodiff.hpp"
#include "kgd/params.hpp"

namespace kgd {

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary();
    // Every token of the tokenized texts plus the reserved tags.
    static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_count = 1);

    int id(const std::string& token) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    int add(const std::string& token);

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

enum class Pooling { Mean, FirstToken };

struct EncoderConfig {
    int dim = 16;
    int trigram_buckets = 1024;
    int max_positions = 256;
    Pooling pooling = Pooling::Mean;
    double init_scale = 0.1;

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
};

// Token ids and hashed character trigrams for one input sequence.
struct EncodedInput {
    std::vector<std::string> tokens;
    std::vector<int> ids;
    std::vector<std::vector<int>> trigrams;
    std::vector<int> segments;

    std::size_t size() const { return ids.size(); }
};

EncodedInput prepare_input(const Vocabulary& vocab, const EncoderConfig& config, const std::vector<std::string>& tokens,
                           const std::vector<int>& segments = {});
std::vector<int> hashed_trigrams(const std::string& token, int buckets);

struct EncoderOutput {
    ad::Var hidden;   // T x d
    ad::Var pooled;   // 1 x d
    ad::Var lexical;  // T x d, word + subword embeddings before attention
};

// One self-attention layer over word, subword, position and segment
// embeddings. Parameters live in a ParamStore under `prefix`.
class ToyEncoder {
public:
    ToyEncoder(std::string prefix, EncoderConfig config) : prefix_(std::move(prefix)), config_(config) {}

    void init_params(ParamStore& params, std::size_t vocab_size, Rng& rng) const;
    EncoderOutput encode(ad::Tape& tape, ParamStore& params, const EncodedInput& input) const;

    const EncoderConfig& config() const { return config_; }
    const std::string& prefix() const { return prefix_; }

private:
    std::string prefix_;
    EncoderConfig config_;
};

}  // namespace kgd
