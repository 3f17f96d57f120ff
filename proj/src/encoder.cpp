#include "kgd/encoder.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "kgd/text.hpp"

namespace kgd {

using nlohmann::json;

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
    for (const auto& t : text::reserved_tags()) add(t);
}

int Vocabulary::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> order;
    for (const auto& t : texts)
        for (const auto& tok : text::tokenize(t))
            if (counts[tok]++ == 0) order.push_back(tok);
    Vocabulary v;
    for (const auto& tok : order)
        if (counts[tok] >= min_count) v.add(tok);
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const json& j) {
    Vocabulary v;
    for (const auto& t : j) v.add(t.get<std::string>());
    return v;
}

json EncoderConfig::to_json() const {
    return {{"dim", dim},
            {"trigram_buckets", trigram_buckets},
            {"max_positions", max_positions},
            {"pooling", pooling == Pooling::Mean ? "mean" : "first"},
            {"init_scale", init_scale}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
    EncoderConfig c;
    c.dim = j.value("dim", c.dim);
    c.trigram_buckets = j.value("trigram_buckets", c.trigram_buckets);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.pooling = j.value("pooling", std::string("mean")) == "first" ? Pooling::FirstToken : Pooling::Mean;
    c.init_scale = j.value("init_scale", c.init_scale);
    return c;
}

std::vector<int> hashed_trigrams(const std::string& token, int buckets) {
    std::vector<int> out;
    if (text::is_tag(token)) return out;
    const std::string s = "#" + token + "#";
    for (std::size_t i = 0; i + 3 <= s.size(); ++i)
        out.push_back(static_cast<int>(text::fnv1a(std::string_view(s).substr(i, 3)) % static_cast<std::uint64_t>(buckets)));
    return out;
}

EncodedInput prepare_input(const Vocabulary& vocab, const EncoderConfig& config, const std::vector<std::string>& tokens,
                           const std::vector<int>& segments) {
    if (tokens.empty()) throw std::invalid_argument("encoder: empty input");
    if (!segments.empty() && segments.size() != tokens.size()) throw std::invalid_argument("encoder: segment length mismatch");
    EncodedInput in;
    in.tokens = tokens;
    for (const auto& t : tokens) {
        in.ids.push_back(vocab.id(t));
        in.trigrams.push_back(hashed_trigrams(t, config.trigram_buckets));
    }
    in.segments = segments.empty() ? std::vector<int>(tokens.size(), 0) : segments;
    return in;
}

void ToyEncoder::init_params(ParamStore& params, std::size_t vocab_size, Rng& rng) const {
    const int d = config_.dim;
    const double s = config_.init_scale;
    params.add_normal(prefix_ + "word", static_cast<Eigen::Index>(vocab_size), d, s, rng);
    params.add_normal(prefix_ + "subword", config_.trigram_buckets, d, s, rng);
    params.add_normal(prefix_ + "position", config_.max_positions, d, s * 0.5, rng);
    params.add_normal(prefix_ + "segment", 2, d, s * 0.5, rng);
    const double proj = 1.0 / std::sqrt(static_cast<double>(d));
    params.add_normal(prefix_ + "wq", d, d, proj, rng);
    params.add_normal(prefix_ + "wk", d, d, proj, rng);
    params.add_normal(prefix_ + "wv", d, d, proj, rng);
    params.add_normal(prefix_ + "wo", d, d, proj, rng);
}

EncoderOutput ToyEncoder::encode(ad::Tape& tape, ParamStore& params, const EncodedInput& input) const {
    if (input.size() == 0) throw std::invalid_argument("encoder: empty input");
    if (input.size() > static_cast<std::size_t>(config_.max_positions))
        throw std::invalid_argument("encoder: input of " + std::to_string(input.size()) + " tokens exceeds max_positions");
    std::vector<int> positions(input.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

    auto lexical = ad::add(ad::gather_rows(tape, params.get(prefix_ + "word"), input.ids),
                           ad::embedding_bag(tape, params.get(prefix_ + "subword"), input.trigrams));
    auto x = ad::add(lexical, ad::add(ad::gather_rows(tape, params.get(prefix_ + "position"), positions),
                                      ad::gather_rows(tape, params.get(prefix_ + "segment"), input.segments)));
    auto q = ad::matmul(x, tape.param(params.get(prefix_ + "wq")));
    auto k = ad::matmul(x, tape.param(params.get(prefix_ + "wk")));
    auto v = ad::matmul(x, tape.param(params.get(prefix_ + "wv")));
    auto attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(config_.dim))));
    auto mixed = ad::matmul(ad::matmul(attn, v), tape.param(params.get(prefix_ + "wo")));
    auto hidden = ad::add(x, ad::tanh(mixed));
    auto pooled = config_.pooling == Pooling::Mean ? ad::mean_rows(hidden) : ad::row(hidden, 0);
    return {hidden, pooled, lexical};
}

}  // namespace kgd
