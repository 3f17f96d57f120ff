#include "kgd/generate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "kgd/text.hpp"

namespace kgd {

using nlohmann::json;

std::vector<std::string> split_sentences(const std::string& text_in) {
    const std::string s = text::normalize_whitespace(text_in);
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if ((c == '.' || c == '!' || c == '?') && i + 1 < s.size() && s[i + 1] == ' ') {
            out.push_back(s.substr(start, i + 1 - start));
            start = i + 2;
        }
    }
    if (start < s.size()) out.push_back(s.substr(start));
    return out;
}

std::vector<std::string> mine_frequent_interrogatives(const std::vector<std::string>& responses, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : responses) {
        const auto sents = split_sentences(r);
        if (sents.empty() || sents.back().back() != '?') continue;
        ++counts[sents.back()];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [s, c] : counts)
        if (c >= min_count) kept.emplace_back(s, c);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (auto& [s, c] : kept) out.push_back(s);
    return out;
}

std::string strip_interrogatives(const std::string& response, const std::vector<std::string>& interrogatives) {
    std::set<std::string> listed;
    for (const auto& q : interrogatives) listed.insert(text::normalize_whitespace(q));
    auto sents = split_sentences(response);
    bool changed = false;
    while (sents.size() >= 2 && listed.count(sents.back())) {
        sents.pop_back();
        changed = true;
    }
    return changed ? text::join(sents) : response;
}

Corpus preprocess_responses(const Corpus& corpus, const std::vector<std::string>& interrogatives) {
    Corpus out = corpus;
    for (auto& d : out)
        if (d.label && d.label->response) d.label->response = strip_interrogatives(*d.label->response, interrogatives);
    return out;
}

// ---------------------------------------------------------------- config

void GenTrainConfig::validate() const {
    if (!(p_s >= 0 && p_s <= 1)) throw std::invalid_argument("p_s must lie in [0, 1]");
    if (batch_size < 1 || epochs < 0 || hidden < 1) throw std::invalid_argument("generator: bad batch size, epochs or hidden size");
    if (max_target_tokens < 1) throw std::invalid_argument("generator: max_target_tokens must be positive");
}

json GenTrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"max_history_tokens", max_history_tokens},
            {"max_target_tokens", max_target_tokens},
            {"p_s", p_s},
            {"k_folds", k_folds},
            {"seed", seed},
            {"hidden", hidden},
            {"format", format == KnowledgeBlockFormat::EntityAnswer ? "entity_answer" : "question_answer"},
            {"encoder", encoder.to_json()}};
}

GenTrainConfig GenTrainConfig::from_json(const json& j) {
    GenTrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.max_history_tokens = j.value("max_history_tokens", c.max_history_tokens);
    c.max_target_tokens = j.value("max_target_tokens", c.max_target_tokens);
    c.p_s = j.value("p_s", c.p_s);
    c.k_folds = j.value("k_folds", c.k_folds);
    c.seed = j.value("seed", c.seed);
    c.hidden = j.value("hidden", c.hidden);
    if (j.value("format", std::string("entity_answer")) == "question_answer") c.format = KnowledgeBlockFormat::QuestionAnswer;
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
    return c;
}

// ---------------------------------------------------------------- examples

std::string target_response(const std::string& target) {
    auto pieces = text::split_whitespace(target);
    if (!pieces.empty() && pieces.front() == text::kResp) pieces.erase(pieces.begin());
    return text::join(pieces);
}

namespace {

const KnowledgeSnippet& lookup(const KnowledgeBase& kb, const KnowledgeRef& ref, const std::string& turn) {
    auto i = kb.find(ref);
    if (!i) throw std::invalid_argument("turn " + turn + ": unknown knowledge " + ref.domain + "/" + ref.entity_id + "/" + ref.doc_id);
    return kb[*i];
}

GenExample assemble(const Dialogue& d, const KnowledgeBase& kb, std::vector<KnowledgeRef> refs,
                    std::vector<BlockSource> provenance, const GenTrainConfig& config) {
    std::vector<KnowledgeSnippet> snippets;
    for (const auto& r : refs) snippets.push_back(lookup(kb, r, d.id));
    GenExample ex;
    ex.dialogue_id = d.id;
    ex.context = build_generation_context(d, snippets, config.max_history_tokens, config.format).text;
    ex.knowledge = std::move(refs);
    ex.provenance = std::move(provenance);
    if (d.label && d.label->response) ex.target = std::string(text::kResp) + " " + *d.label->response;
    return ex;
}

}  // namespace

GenExample make_gen_context(const Dialogue& dialogue, const KnowledgeBase& kb, const RankedList& selection,
                            const GenTrainConfig& config) {
    std::vector<KnowledgeRef> refs;
    for (std::size_t i = 0; i < selection.items.size() && i < static_cast<std::size_t>(text::kMaxRankedKnowledge); ++i)
        refs.push_back(selection.items[i].ref);
    return assemble(dialogue, kb, refs, std::vector<BlockSource>(refs.size(), BlockSource::Selected), config);
}

std::vector<GenExample> build_gen_examples(const Corpus& corpus, const KnowledgeBase& kb,
                                           const std::map<std::string, RankedList>& selection,
                                           const GenTrainConfig& config, Rng& rng, const CandidateFn& candidates) {
    config.validate();
    std::vector<GenExample> out;
    for (const auto& d : corpus) {
        if (!d.label || !d.label->is_knowledge_seeking || !d.label->response) continue;
        auto it = selection.find(d.id);
        if (it == selection.end()) throw std::invalid_argument("no selection output for turn " + d.id);
        std::vector<KnowledgeRef> refs;
        for (std::size_t i = 0; i < it->second.items.size() && i < static_cast<std::size_t>(text::kMaxRankedKnowledge); ++i)
            refs.push_back(it->second.items[i].ref);
        std::vector<BlockSource> prov(refs.size(), BlockSource::Selected);

        const bool fire = rng.bernoulli(config.p_s);
        const auto& gt = d.label->knowledge_refs;
        auto pos = std::find_if(refs.begin(), refs.end(),
                                [&](const KnowledgeRef& r) { return std::find(gt.begin(), gt.end(), r) != gt.end(); });
        bool substituted = false;
        if (fire && pos != refs.end()) {
            auto excluded = [&](std::size_t i) {
                const auto r = kb[i].ref();
                return std::find(refs.begin(), refs.end(), r) != refs.end() || std::find(gt.begin(), gt.end(), r) != gt.end();
            };
            std::vector<std::size_t> pool;
            if (candidates)
                for (std::size_t i : candidates(d))
                    if (!excluded(i)) pool.push_back(i);
            if (pool.empty())
                for (std::size_t i = 0; i < kb.size(); ++i)
                    if (!excluded(i)) pool.push_back(i);
            if (!pool.empty()) {
                *pos = kb[pool[rng.uniform_index(pool.size())]].ref();
                prov[static_cast<std::size_t>(pos - refs.begin())] = BlockSource::Distractor;
                substituted = true;
            }
        }
        auto ex = assemble(d, kb, std::move(refs), std::move(prov), config);
        ex.substituted = substituted;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------- generator

ToyGenerator::ToyGenerator(Vocabulary source, Vocabulary target, GenTrainConfig config)
    : source_(std::move(source)), target_(std::move(target)), config_(config), encoder_("enc.", config.encoder) {
    if (target_.id(kEos) == Vocabulary::kUnk) target_.add(kEos);
    const int d = config_.encoder.dim, h = config_.hidden;
    const auto V = static_cast<Eigen::Index>(target_.size());
    Rng rng(text::mix_seed(config_.seed, "generator-init"));
    encoder_.init_params(params_, source_.size(), rng);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sh = 1.0 / std::sqrt(static_cast<double>(h));
    params_.add_normal("gen.proj", d, h, sd, rng);
    params_.add_normal("gen.init", d, h, sd, rng);
    params_.add_normal("dec.embed", V, h, 0.1, rng);
    params_.add_normal("dec.we", h, h, sh, rng);
    params_.add_normal("dec.wh", h, h, sh, rng);
    params_.add_zeros("dec.bh", 1, h, false);
    params_.add_normal("dec.oh", h, V, sh, rng);
    params_.add_normal("dec.oc", h, V, sh, rng);
    params_.add_zeros("dec.bo", 1, V, false);
}

std::vector<std::string> ToyGenerator::target_tokens(const std::string& target) const {
    auto toks = text::tokenize(target_response(target));
    if (toks.size() + 1 > config_.max_target_tokens) toks.resize(config_.max_target_tokens - 1);
    return toks;
}

ToyGenerator::Encoded ToyGenerator::encode_context(ad::Tape& tape, const std::string& context) const {
    auto tokens = text::tokenize(context);
    const std::size_t cap = static_cast<std::size_t>(config_.encoder.max_positions);
    if (tokens.size() > cap) tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(cap));
    if (tokens.empty()) tokens.emplace_back("<unk>");
    const auto out = encoder_.encode(tape, params_, prepare_input(source_, config_.encoder, tokens));
    return {ad::matmul(out.hidden, tape.param(params_.get("gen.proj"))),
            ad::tanh(ad::matmul(out.pooled, tape.param(params_.get("gen.init"))))};
}

std::pair<ad::Var, ad::Var> ToyGenerator::step(ad::Tape& tape, const Encoded& enc, ad::Var state, int token) const {
    auto e = ad::gather_rows(tape, params_.get("dec.embed"), {token});
    auto h = ad::add(ad::matmul(e, tape.param(params_.get("dec.we"))), ad::matmul(state, tape.param(params_.get("dec.wh"))));
    h = ad::tanh(ad::add(h, tape.param(params_.get("dec.bh"))));
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    auto a = ad::softmax_rows(ad::scale(ad::matmul_nt(h, enc.states), scale));
    auto c = ad::matmul(a, enc.states);
    auto logits = ad::add(ad::matmul(h, tape.param(params_.get("dec.oh"))), ad::matmul(c, tape.param(params_.get("dec.oc"))));
    logits = ad::add(logits, tape.param(params_.get("dec.bo")));
    return {h, logits};
}

ad::Var ToyGenerator::loss(ad::Tape& tape, const std::string& context, const std::string& target) const {
    const auto enc = encode_context(tape, context);
    const auto toks = target_tokens(target);
    std::vector<int> targets;
    for (const auto& t : toks) targets.push_back(target_.id(t));
    targets.push_back(target_.id(kEos));
    ad::Var state = enc.init;
    int prev = target_.id(std::string(text::kResp));
    std::vector<ad::Var> rows;
    for (int t : targets) {
        auto [next, logits] = step(tape, enc, state, prev);
        rows.push_back(logits);
        state = next;
        prev = t;
    }
    return ad::sequence_cross_entropy(ad::concat_rows(rows), targets);
}

std::vector<Hypothesis> ToyGenerator::generate_nbest(const std::string& context, std::size_t n) const {
    if (n == 0) throw std::invalid_argument("generate_nbest: n must be at least 1");
    ad::Tape tape;
    const auto enc = encode_context(tape, context);
    const int eos = target_.id(kEos);
    struct Beam {
        std::vector<int> tokens;
        double logprob;
        ad::Var state;
        int prev;
    };
    std::vector<Beam> beams{{{}, 0.0, enc.init, target_.id(std::string(text::kResp))}};
    std::vector<std::pair<std::vector<int>, double>> finished;
    const std::size_t width = n;
    for (std::size_t len = 0; len < config_.max_target_tokens && !beams.empty() && finished.size() < width; ++len) {
        struct Cand {
            std::size_t beam;
            int token;
            double logprob;
            ad::Var state;
        };
        std::vector<Cand> cands;
        for (std::size_t b = 0; b < beams.size(); ++b) {
            auto [state, logits] = step(tape, enc, beams[b].state, beams[b].prev);
            const ad::Matrix& z = logits.value();
            const double lse = z.maxCoeff() + std::log((z.array() - z.maxCoeff()).exp().sum());
            std::vector<int> ids(static_cast<std::size_t>(z.cols()));
            for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
            const std::size_t keep = std::min(width, ids.size());
            std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(),
                              [&](int x, int y) { return z(0, x) != z(0, y) ? z(0, x) > z(0, y) : x < y; });
            for (std::size_t i = 0; i < keep; ++i)
                cands.push_back({b, ids[i], beams[b].logprob + z(0, ids[i]) - lse, state});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.logprob > y.logprob; });
        std::vector<Beam> next;
        for (const auto& c : cands) {
            if (next.size() + finished.size() >= width) break;
            auto toks = beams[c.beam].tokens;
            if (c.token == eos || len + 1 == config_.max_target_tokens) {
                if (c.token != eos) toks.push_back(c.token);
                finished.emplace_back(std::move(toks), c.logprob);
            } else {
                toks.push_back(c.token);
                next.push_back({std::move(toks), c.logprob, c.state, c.token});
            }
        }
        beams = std::move(next);
    }
    for (auto& b : beams) finished.emplace_back(std::move(b.tokens), b.logprob);
    std::stable_sort(finished.begin(), finished.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
    std::vector<Hypothesis> out;
    std::set<std::string> seen;
    for (const auto& [toks, lp] : finished) {
        std::vector<std::string> words;
        for (int t : toks) words.push_back(target_.token(t));
        std::string s = text::join(words);
        if (!seen.insert(s).second) continue;
        out.push_back({std::move(s), lp});
        if (out.size() == n) break;
    }
    return out;
}

std::string ToyGenerator::greedy(const std::string& context) const { return generate_nbest(context, 1).front().text; }

void ToyGenerator::save(const std::filesystem::path& path) const {
    save_checkpoint(path, {"toy_generator", config_.to_json(), {{"source", source_.to_json()}, {"target", target_.to_json()}}, params_});
}

ToyGenerator ToyGenerator::load(const std::filesystem::path& path) {
    auto ckpt = load_checkpoint(path, "toy_generator");
    ToyGenerator g(Vocabulary::from_json(ckpt.extra.at("source")), Vocabulary::from_json(ckpt.extra.at("target")),
                   GenTrainConfig::from_json(ckpt.config));
    g.params_.copy_values_from(ckpt.params);
    return g;
}

ToyGenerator train_generator(const std::vector<GenExample>& examples, const GenTrainConfig& config) {
    config.validate();
    if (examples.empty()) throw std::invalid_argument("train_generator: no examples");
    std::vector<std::string> contexts, responses;
    for (const auto& e : examples) {
        if (e.target.empty()) throw std::invalid_argument("train_generator: example " + e.dialogue_id + " has no target");
        contexts.push_back(e.context);
        responses.push_back(target_response(e.target));
    }
    ToyGenerator model(Vocabulary::build(contexts), Vocabulary::build(responses), config);
    AdamW opt({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(text::mix_seed(config.seed, "generator-order"));
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    model.params().zero_grad();
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0, tokens = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = examples[order[i]];
                ad::Tape tape;
                auto l = model.loss(tape, ex.context, ex.target);
                total += l.scalar();
                tokens += static_cast<double>(model.target_tokens(ex.target).size() + 1);
                tape.backward(l);
            }
            opt.step(model.params(), 1.0 / static_cast<double>(end - start));
        }
        model.epoch_perplexity.push_back(std::exp(total / tokens));
    }
    return model;
}

std::vector<Hypothesis> decode_nbest(const Generator& generator, const std::string& context, std::size_t n) {
    return generator.generate_nbest(context, n);
}

}  // namespace kgd
