#include "kgd/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "kgd/text.hpp"

namespace kgd {

using nlohmann::json;

PairInput make_pair_input(const Vocabulary& vocab, const EncoderConfig& config, const std::string& sentence1,
                          const std::string& sentence2) {
    auto first = text::tokenize(sentence1);
    const auto second = text::tokenize(sentence2);
    const std::size_t cap = static_cast<std::size_t>(config.max_positions);
    if (second.size() >= cap) throw std::invalid_argument("pair input: sentence 2 alone exceeds max_positions");
    if (first.size() + second.size() > cap) first.erase(first.begin(), first.end() - static_cast<std::ptrdiff_t>(cap - second.size()));
    if (first.empty() && second.empty()) first.emplace_back("<unk>");

    std::vector<std::string> tokens = first;
    std::vector<int> segments(first.size(), 0);
    tokens.insert(tokens.end(), second.begin(), second.end());
    segments.insert(segments.end(), second.size(), 1);

    PairInput in;
    in.encoded = prepare_input(vocab, config, tokens, segments);
    std::size_t query_start = 0;
    for (std::size_t i = 0; i < first.size(); ++i)
        if (tokens[i] == text::kUser) query_start = i;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (text::is_tag(tokens[i]) || text::is_punctuation_token(tokens[i]) || is_function_word(tokens[i])) continue;
        (segments[i] == 0 ? in.first_words : in.second_words).push_back(static_cast<int>(i));
        if (segments[i] == 0 && i >= query_start) in.query_words.push_back(static_cast<int>(i));
    }
    auto coverage = [&](const std::vector<int>& from, const std::vector<int>& against) -> std::pair<double, double> {
        if (from.empty() || against.empty()) return {0.0, 0.0};
        double sum = 0, lo = 1;
        for (int j : from) {
            double best = 0;
            for (int i : against)
                best = std::max(best, trigram_cosine(tokens[static_cast<std::size_t>(i)], tokens[static_cast<std::size_t>(j)]));
            sum += best;
            lo = std::min(lo, best);
        }
        return {sum / static_cast<double>(from.size()), lo};
    };
    const auto [m2, l2] = coverage(in.second_words, in.first_words);
    const auto [mq, lq] = coverage(in.query_words, in.second_words);
    in.surface = {m2, l2, mq, lq};
    return in;
}

bool is_function_word(const std::string& token) {
    static const std::set<std::string> words = {
        "a", "an", "the", "of", "and", "or", "at", "in", "on", "for", "to", "by", "with", "from", "into", "about",
        "is", "are", "was", "be", "do", "does", "did", "can", "could", "should", "may", "will", "would", "i", "you",
        "my", "me", "we", "it", "its", "there", "this", "that", "they", "have", "has", "please", "what", "how",
        "when", "which", "your", "our", "any", "some", "get", "s"};
    return words.count(token) > 0;
}

double trigram_cosine(const std::string& a, const std::string& b) {
    auto grams = [](const std::string& w) {
        std::map<std::string, double> g;
        const std::string p = "#" + text::lowercase(w) + "#";
        for (std::size_t i = 0; i + 3 <= p.size(); ++i) g[p.substr(i, 3)] += 1;
        if (p.size() < 3) g[p] += 1;
        return g;
    };
    const auto ga = grams(a), gb = grams(b);
    double dot = 0, na = 0, nb = 0;
    for (const auto& [k, v] : ga) {
        na += v * v;
        if (auto it = gb.find(k); it != gb.end()) dot += v * it->second;
    }
    for (const auto& [k, v] : gb) nb += v * v;
    return dot / std::sqrt(na * nb);
}

namespace {

ad::Var gather_var_rows(ad::Tape& tape, ad::Var m, const std::vector<int>& rows) {
    std::vector<ad::Var> parts;
    parts.reserve(rows.size());
    for (int r : rows) parts.push_back(ad::row(m, r));
    (void)tape;
    return ad::concat_rows(parts);
}

}  // namespace

ad::Var lexical_alignment(ad::Tape& tape, ad::Var lexical, const PairInput& input, double temperature) {
    if (input.first_words.empty() || input.second_words.empty()) return tape.constant(ad::Matrix::Zero(1, 2));
    auto a = ad::l2_normalize_rows(gather_var_rows(tape, lexical, input.first_words));
    auto b = ad::l2_normalize_rows(gather_var_rows(tape, lexical, input.second_words));
    const double n1 = static_cast<double>(input.first_words.size());
    const double n2 = static_cast<double>(input.second_words.size());
    // Soft max over side-1 words, centered so it stays within [max - t log n1, max].
    auto sims = ad::scale(ad::matmul_nt(b, a), 1.0 / temperature);
    auto best = ad::scale(ad::logsumexp_rows(sims), temperature);                              // n2 x 1
    best = ad::add(best, tape.constant(ad::Matrix::Constant(best.rows(), 1, -temperature * std::log(n1))));
    auto mean = ad::mean_rows(best);                                                               // 1 x 1
    auto soft_min = ad::scale(ad::logsumexp_rows(ad::scale(ad::transpose(best), -1.0 / temperature)), -temperature);
    soft_min = ad::add(soft_min, tape.scalar(temperature * std::log(n2)));
    return ad::concat_cols({mean, soft_min});
}

ad::Var pair_alignment(ad::Tape& tape, ad::Var lexical, const PairInput& input) {
    ad::Matrix surface(1, 4);
    surface << input.surface[0], input.surface[1], input.surface[2], input.surface[3];
    return ad::concat_cols({lexical_alignment(tape, lexical, input), tape.constant(surface)});
}

json PairTrainConfig::to_json() const {
    return {{"epochs", epochs},   {"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"weight_decay", weight_decay}, {"seed", seed}, {"encoder", encoder.to_json()}};
}

PairTrainConfig PairTrainConfig::from_json(const json& j) {
    PairTrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
    return c;
}

PairClassifier::PairClassifier(Vocabulary vocab, PairTrainConfig config)
    : vocab_(std::move(vocab)), config_(config), encoder_("enc.", config.encoder) {
    Rng rng(text::mix_seed(config_.seed, "pair-classifier-init"));
    encoder_.init_params(params_, vocab_.size(), rng);
    params_.add_normal("head.w", config_.encoder.dim, 1, 0.1, rng);
    params_.add_zeros("head.u", kAlignmentFeatures, 1, false);
    params_.add_zeros("head.b", 1, 1, false);
}

ad::Var PairClassifier::logit(ad::Tape& tape, const std::string& sentence1, const std::string& sentence2) const {
    const auto input = make_pair_input(vocab_, config_.encoder, sentence1, sentence2);
    const auto out = encoder_.encode(tape, params_, input.encoded);
    auto align = pair_alignment(tape, out.lexical, input);
    auto z = ad::add(ad::matmul(out.pooled, tape.param(params_.get("head.w"))),
                     ad::matmul(align, tape.param(params_.get("head.u"))));
    return ad::add(z, tape.param(params_.get("head.b")));
}

double PairClassifier::score(const std::string& sentence1, const std::string& sentence2) const {
    ad::Tape tape;
    return ad::sigmoid(logit(tape, sentence1, sentence2).scalar());
}

ad::Var PairClassifier::loss(ad::Tape& tape, const PairExample& example) const {
    return ad::bce_with_logits(logit(tape, example.sentence1, example.sentence2), example.label ? 1.0 : 0.0);
}

void PairClassifier::save(const std::filesystem::path& path) const {
    save_checkpoint(path, {"pair_classifier", config_.to_json(), {{"vocab", vocab_.to_json()}}, params_});
}

PairClassifier PairClassifier::load(const std::filesystem::path& path) {
    auto ckpt = load_checkpoint(path, "pair_classifier");
    PairClassifier model(Vocabulary::from_json(ckpt.extra.at("vocab")), PairTrainConfig::from_json(ckpt.config));
    model.params_.copy_values_from(ckpt.params);
    return model;
}

PairClassifier train_pair_classifier(const std::vector<PairExample>& examples, const PairTrainConfig& config) {
    bool has_pos = false, has_neg = false;
    for (const auto& e : examples) (e.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw std::invalid_argument("train_pair_classifier: need at least one positive and one negative example");
    if (config.batch_size < 1 || config.epochs < 0) throw std::invalid_argument("train_pair_classifier: bad batch size or epochs");

    std::vector<std::string> texts;
    for (const auto& e : examples) {
        texts.push_back(e.sentence1);
        texts.push_back(e.sentence2);
    }
    PairClassifier model(Vocabulary::build(texts), config);
    AdamW opt({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(text::mix_seed(config.seed, "pair-classifier-order"));
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    model.params().zero_grad();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            for (std::size_t i = start; i < end; ++i) {
                ad::Tape tape;
                auto l = model.loss(tape, examples[order[i]]);
                total += l.scalar();
                tape.backward(l);
            }
            opt.step(model.params(), 1.0 / static_cast<double>(end - start));
        }
        model.epoch_losses.push_back(total / static_cast<double>(order.size()));
    }
    return model;
}

}  // namespace kgd
