#include "kgd/rank.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "kgd/entity_track.hpp"
#include "kgd/text.hpp"

namespace kgd {

using nlohmann::json;

SparseVariant parse_sparse_variant(const std::string& name) {
    if (name == "wd" || name == "WD") return SparseVariant::WD;
    if (name == "wd2" || name == "WD2") return SparseVariant::WD2;
    throw std::invalid_argument("unknown sparse feature variant '" + name + "'");
}

std::string to_string(SparseVariant v) { return v == SparseVariant::WD ? "wd" : "wd2"; }

ad::Matrix SparseFeatures::row(double alpha, const FeatureMask& mask) const {
    ad::Matrix m(1, kCount);
    const auto v = values();
    for (int i = 0; i < kCount; ++i) m(0, i) = v[static_cast<std::size_t>(i)] * (mask[static_cast<std::size_t>(i)] ? alpha : 1.0);
    return m;
}

bool is_stopword(const std::string& token) {
    static const std::unordered_set<std::string> words = {
        "a", "an", "the", "of", "and", "or", "at", "in", "on", "for", "to", "by", "with", "from", "de", "la", "le", "&"};
    return words.count(token) > 0;
}

namespace {

std::vector<std::vector<std::string>> turn_tokens(const Dialogue& d) {
    std::vector<std::vector<std::string>> out;
    for (const auto& t : d.turns) out.push_back(text::word_tokens(t.text));
    return out;
}

}  // namespace

std::optional<EntityRef> last_mentioned_entity(const Dialogue& dialogue, const std::vector<EntityRef>& entities) {
    const auto turns = turn_tokens(dialogue);
    std::optional<EntityRef> best;
    std::tuple<std::size_t, std::size_t, std::size_t> best_key{0, 0, 0};
    for (const auto& e : entities) {
        if (e.is_domain_level()) continue;
        const auto key = text::word_tokens(e.name);
        if (key.empty()) continue;
        for (std::size_t t = 0; t < turns.size(); ++t) {
            const auto& w = turns[t];
            for (std::size_t s = 0; s + key.size() <= w.size(); ++s) {
                if (!std::equal(key.begin(), key.end(), w.begin() + static_cast<std::ptrdiff_t>(s))) continue;
                const std::tuple<std::size_t, std::size_t, std::size_t> k{t + 1, s + 1, key.size()};
                if (!best || k > best_key) {
                    best = e;
                    best_key = k;
                }
            }
        }
    }
    return best;
}

SparseFeatures extract_sparse_features(const Dialogue& dialogue, const KnowledgeSnippet& snippet,
                                       const std::optional<EntityRef>& last_entity, SparseVariant variant) {
    SparseFeatures f;
    f.is_domain_level = snippet.is_domain_level() ? 1 : 0;
    f.is_last_entity =
        (last_entity && last_entity->domain == snippet.domain && last_entity->entity_id == snippet.entity_id) ? 1 : 0;
    if (variant == SparseVariant::WD2) {
        const auto name = text::word_tokens(snippet.entity_name);
        std::set<std::string> unigrams;
        std::set<std::pair<std::string, std::string>> bigrams;
        for (const auto& w : turn_tokens(dialogue)) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                unigrams.insert(w[i]);
                if (i + 1 < w.size()) bigrams.insert({w[i], w[i + 1]});
            }
        }
        for (std::size_t i = 0; i < name.size(); ++i) {
            if (!is_stopword(name[i]) && unigrams.count(name[i])) f.unigram_in_dialogue = 1;
            if (i + 1 < name.size() && bigrams.count({name[i], name[i + 1]})) f.bigram_in_dialogue = 1;
        }
    }
    return f;
}

SparseFeatures extract_sparse_features(const Dialogue& dialogue, const KnowledgeSnippet& snippet,
                                       const std::vector<EntityRef>& entities, SparseVariant variant) {
    return extract_sparse_features(dialogue, snippet, last_mentioned_entity(dialogue, entities), variant);
}

// ---------------------------------------------------------------- sampling

NegativePools negative_pools(const std::vector<KnowledgeRef>& ground_truth, const KnowledgeBase& kb,
                             const Dialogue& dialogue) {
    std::set<KnowledgeRef> gt(ground_truth.begin(), ground_truth.end());
    std::set<std::pair<std::string, std::string>> gt_entities;
    for (const auto& r : ground_truth) gt_entities.insert({r.domain, r.entity_id});
    NegativePools pools;
    for (std::size_t i = 0; i < kb.size(); ++i)
        if (!gt.count(kb[i].ref())) pools.whole.push_back(i);
    for (const auto& e : exact_match_entities(dialogue, kb)) {
        const bool is_gt = gt_entities.count({e.domain, e.entity_id}) > 0;
        for (std::size_t i : kb.snippets_of(e.domain, e.entity_id)) {
            if (gt.count(kb[i].ref())) continue;
            pools.mentioned.push_back(i);
            if (!is_gt) pools.other_entities.push_back(i);
        }
    }
    std::sort(pools.mentioned.begin(), pools.mentioned.end());
    std::sort(pools.other_entities.begin(), pools.other_entities.end());
    return pools;
}

std::vector<std::size_t> sample_negatives(const std::vector<KnowledgeRef>& ground_truth, const KnowledgeBase& kb,
                                          const Dialogue& dialogue, std::size_t count, Rng& rng) {
    const auto pools = negative_pools(ground_truth, kb, dialogue);
    if (pools.whole.size() < count)
        throw std::invalid_argument("sample_negatives: only " + std::to_string(pools.whole.size()) +
                                    " non-ground-truth snippets for " + std::to_string(count) + " draws");
    const std::vector<const std::vector<std::size_t>*> order = {&pools.whole, &pools.mentioned, &pools.other_entities};
    std::set<std::size_t> chosen;
    std::vector<std::size_t> out;
    std::size_t p = 0, idle = 0;
    while (out.size() < count) {
        const auto& pool = *order[p];
        p = (p + 1) % order.size();
        std::vector<std::size_t> left;
        for (std::size_t i : pool)
            if (!chosen.count(i)) left.push_back(i);
        if (left.empty()) {
            if (++idle > order.size()) break;
            continue;
        }
        idle = 0;
        const std::size_t pick = left[rng.uniform_index(left.size())];
        chosen.insert(pick);
        out.push_back(pick);
    }
    return out;
}

EntityCandidates sample_entity_candidates(const KnowledgeBase& kb, const Dialogue& dialogue,
                                          const EntityRef& ground_truth, std::size_t n_total, Rng& rng) {
    const auto& all = kb.entities();
    if (n_total < 1 || all.size() < n_total)
        throw std::invalid_argument("sample_entity_candidates: need at least " + std::to_string(n_total) +
                                    " distinct entities");
    const auto mentioned = exact_match_entities(dialogue, kb);
    std::vector<EntityRef> preferred, rest;
    for (const auto& e : all) {
        if (e == ground_truth) continue;
        const bool pref = e.domain == ground_truth.domain || std::find(mentioned.begin(), mentioned.end(), e) != mentioned.end();
        (pref ? preferred : rest).push_back(e);
    }
    EntityCandidates out;
    const std::size_t want = n_total - 1;
    for (std::size_t i : rng.sample_without_replacement(preferred.size(), std::min(want, preferred.size())))
        out.entities.push_back(preferred[i]);
    const std::size_t short_by = want - out.entities.size();
    for (std::size_t i : rng.sample_without_replacement(rest.size(), short_by)) out.entities.push_back(rest[i]);
    out.true_index = rng.uniform_index(n_total);
    out.entities.insert(out.entities.begin() + static_cast<std::ptrdiff_t>(out.true_index), ground_truth);
    return out;
}

// ---------------------------------------------------------------- MTL head

void validate_spans(const std::vector<TokenSpan>& spans, std::size_t length) {
    if (spans.empty()) throw std::invalid_argument("entity spans: need at least one span");
    std::size_t prev_end = 0;
    for (const auto& [b, e] : spans) {
        if (b >= e || e > length || b < prev_end) throw std::out_of_range("entity spans must be ordered, disjoint and in range");
        prev_end = e;
    }
}

MtlOutput mtl_forward(ad::Var f, ad::Var H, const std::vector<TokenSpan>& spans, const MtlHead& head) {
    validate_spans(spans, static_cast<std::size_t>(H.rows()));
    const double d = static_cast<double>(f.cols());
    MtlOutput out;
    auto query = ad::matmul_nt(ad::matmul(f, head.wq), head.wk);  // f Wq Wk^T
    out.attention = ad::softmax_rows(ad::scale(ad::matmul_nt(query, H), 1.0 / std::sqrt(d)));
    out.weighted = ad::scale_rows(ad::matmul(H, head.wv), ad::transpose(out.attention));
    std::vector<ad::Var> sums;
    for (const auto& [b, e] : spans)
        sums.push_back(ad::sum_rows(out.weighted, static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e)));
    out.entity_sums = ad::concat_rows(sums);
    out.logits = ad::transpose(ad::matmul(out.entity_sums, head.entity));
    out.distribution = ad::softmax_rows(out.logits);
    return out;
}

// ---------------------------------------------------------------- config

json RankConfig::to_json() const {
    return {{"use_mtl", use_mtl},
            {"variant", kgd::to_string(variant)},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"lambda_rank", lambda_rank},
            {"lambda_domain", lambda_domain},
            {"lambda_entity", lambda_entity},
            {"negatives", negatives},
            {"entity_candidates", entity_candidates},
            {"ena_probability", ena_probability},
            {"ena_delete_prob", ena_delete_prob},
            {"max_history_tokens", max_history_tokens},
            {"alpha", alpha},
            {"alpha_mask", alpha_mask},
            {"encoder", encoder.to_json()}};
}

RankConfig RankConfig::from_json(const json& j) {
    RankConfig c;
    c.use_mtl = j.value("use_mtl", c.use_mtl);
    if (j.contains("variant")) c.variant = parse_sparse_variant(j["variant"].get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.lambda_rank = j.value("lambda_rank", c.lambda_rank);
    c.lambda_domain = j.value("lambda_domain", c.lambda_domain);
    c.lambda_entity = j.value("lambda_entity", c.lambda_entity);
    c.negatives = j.value("negatives", c.negatives);
    c.entity_candidates = j.value("entity_candidates", c.entity_candidates);
    c.ena_probability = j.value("ena_probability", c.ena_probability);
    c.ena_delete_prob = j.value("ena_delete_prob", c.ena_delete_prob);
    c.max_history_tokens = j.value("max_history_tokens", c.max_history_tokens);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("alpha_mask")) c.alpha_mask = j["alpha_mask"].get<FeatureMask>();
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
    return c;
}

void sort_ranked(std::vector<RankedItem>& items) {
    std::stable_sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.probability != b.probability) return a.probability > b.probability;
        return ref_less(a.ref, b.ref);
    });
}

// ---------------------------------------------------------------- scorer

KnowledgeScorer::KnowledgeScorer(Vocabulary vocab, RankConfig config, std::vector<std::string> domains)
    : vocab_(std::move(vocab)), config_(config), domains_(std::move(domains)), encoder_("enc.", config.encoder) {
    if (domains_.empty()) throw std::invalid_argument("knowledge scorer needs at least one domain");
    const int d = config_.encoder.dim;
    Rng rng(text::mix_seed(config_.seed, "knowledge-scorer-init"));
    encoder_.init_params(params_, vocab_.size(), rng);
    params_.add_normal("head.w", d, 1, 0.1, rng);
    params_.add_zeros("head.u", kAlignmentFeatures, 1, false);
    params_.add_zeros("head.b", 1, 1, false);
    params_.add_zeros("wide.v", SparseFeatures::kCount, 1, false);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    params_.add_normal("mtl.wq", d, d, s, rng);
    params_.add_normal("mtl.wk", d, d, s, rng);
    params_.add_normal("mtl.wv", d, d, s, rng);
    params_.add_normal("mtl.entity", d, 1, 0.1, rng);
    params_.add_normal("mtl.domain", d, static_cast<Eigen::Index>(domains_.size()), 0.1, rng);
    params_.add_zeros("mtl.domain_b", 1, static_cast<Eigen::Index>(domains_.size()), false);
}

std::size_t KnowledgeScorer::domain_index(const std::string& domain) const {
    auto it = std::find(domains_.begin(), domains_.end(), domain);
    if (it == domains_.end()) throw std::invalid_argument("unknown domain '" + domain + "'");
    return static_cast<std::size_t>(it - domains_.begin());
}

std::string KnowledgeScorer::history_text(const Dialogue& dialogue) const {
    return linearize_history(dialogue, config_.max_history_tokens);
}

KnowledgeScorer::Forward KnowledgeScorer::forward(ad::Tape& tape, const std::string& history,
                                                  const KnowledgeSnippet& snippet, const SparseFeatures& features,
                                                  double alpha, const FeatureMask& mask) const {
    const auto input = make_pair_input(vocab_, config_.encoder, history, linearize_knowledge(snippet));
    const auto enc = encoder_.encode(tape, params_, input.encoded);
    auto align = pair_alignment(tape, enc.lexical, input);
    auto z = ad::add(ad::matmul(enc.pooled, tape.param(params_.get("head.w"))),
                     ad::matmul(align, tape.param(params_.get("head.u"))));
    z = ad::add(z, tape.param(params_.get("head.b")));
    z = ad::add(z, ad::matmul(tape.constant(features.row(alpha, mask)), tape.param(params_.get("wide.v"))));
    return {z, enc.pooled};
}

MtlHead KnowledgeScorer::mtl_head(ad::Tape& tape) const {
    return {tape.param(params_.get("mtl.wq")), tape.param(params_.get("mtl.wk")), tape.param(params_.get("mtl.wv")),
            tape.param(params_.get("mtl.entity"))};
}

EncodedInput KnowledgeScorer::entity_input(const std::vector<EntityRef>& entities, std::vector<TokenSpan>& spans) const {
    std::vector<std::string> tokens;
    spans.clear();
    for (const auto& e : entities) {
        auto t = text::tokenize(e.name);
        if (t.empty()) t.push_back("<unk>");
        spans.emplace_back(tokens.size(), tokens.size() + t.size());
        tokens.insert(tokens.end(), t.begin(), t.end());
    }
    if (tokens.size() > static_cast<std::size_t>(config_.encoder.max_positions))
        throw std::invalid_argument("entity names exceed the encoder's max_positions");
    return prepare_input(vocab_, config_.encoder, tokens);
}

ad::Var KnowledgeScorer::auxiliary_loss(ad::Tape& tape, ad::Var pooled, const EntityCandidates& candidates,
                                        std::size_t domain) const {
    auto dom = ad::add(ad::matmul(pooled, tape.param(params_.get("mtl.domain"))), tape.param(params_.get("mtl.domain_b")));
    auto loss = ad::scale(ad::cross_entropy(dom, static_cast<Eigen::Index>(domain)), config_.lambda_domain);
    std::vector<TokenSpan> spans;
    const auto input2 = entity_input(candidates.entities, spans);
    const auto H = encoder_.encode(tape, params_, input2).hidden;
    const auto out = mtl_forward(pooled, H, spans, mtl_head(tape));
    // KL(one-hot || p) reduces to -log p_true.
    auto kl = ad::cross_entropy(out.logits, static_cast<Eigen::Index>(candidates.true_index));
    return ad::add(loss, ad::scale(kl, config_.lambda_entity));
}

ad::Var KnowledgeScorer::pointwise_loss(ad::Tape& tape, const std::string& history, const KnowledgeSnippet& snippet,
                                        const SparseFeatures& features, bool label, const EntityCandidates* candidates,
                                        std::size_t domain) const {
    const auto fw = forward(tape, history, snippet, features, 1.0, kAllFeatures);
    auto loss = ad::scale(ad::bce_with_logits(fw.logit, label ? 1.0 : 0.0), config_.lambda_rank);
    if (config_.use_mtl && candidates) loss = ad::add(loss, auxiliary_loss(tape, fw.pooled, *candidates, domain));
    return loss;
}

double KnowledgeScorer::probability(const std::string& history, const KnowledgeSnippet& snippet,
                                    const SparseFeatures& features, double alpha, const FeatureMask& mask) const {
    ad::Tape tape;
    return ad::sigmoid(forward(tape, history, snippet, features, alpha, mask).logit.scalar());
}

void KnowledgeScorer::save(const std::filesystem::path& path, const std::string& kind) const {
    save_checkpoint(path, {kind, config_.to_json(), {{"vocab", vocab_.to_json()}, {"domains", domains_}}, params_});
}

KnowledgeScorer KnowledgeScorer::load(const std::filesystem::path& path, const std::string& kind) {
    auto ckpt = load_checkpoint(path, kind);
    KnowledgeScorer model(Vocabulary::from_json(ckpt.extra.at("vocab")), RankConfig::from_json(ckpt.config),
                          ckpt.extra.at("domains").get<std::vector<std::string>>());
    model.params_.copy_values_from(ckpt.params);
    return model;
}

Vocabulary ranking_vocabulary(const Corpus& corpus, const KnowledgeBase& kb) {
    std::vector<std::string> texts;
    for (const auto& d : corpus)
        for (const auto& t : d.turns) texts.push_back(t.text);
    for (const auto& s : kb.snippets()) {
        texts.push_back(s.entity_name);
        texts.push_back(s.question);
        texts.push_back(s.answer);
        texts.push_back(s.domain);
    }
    return Vocabulary::build(texts);
}

namespace {

struct PointInstance {
    std::size_t dialogue;
    std::size_t snippet;
    bool label;
};

const KnowledgeSnippet& snippet_for(const KnowledgeBase& kb, const KnowledgeRef& ref) {
    auto i = kb.find(ref);
    if (!i) throw std::invalid_argument("unknown knowledge " + ref.domain + "/" + ref.entity_id + "/" + ref.doc_id);
    return kb[*i];
}

bool usable(const Dialogue& d) { return d.label && d.label->is_knowledge_seeking && !d.label->knowledge_refs.empty(); }

}  // namespace

KnowledgeScorer train_pointwise(const Corpus& corpus, const KnowledgeBase& kb, const RankConfig& config) {
    if (config.batch_size < 1 || config.epochs < 0) throw std::invalid_argument("train_pointwise: bad batch size or epochs");
    std::vector<std::size_t> labeled;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (usable(corpus[i])) labeled.push_back(i);
    if (labeled.empty() || config.negatives == 0 || kb.size() < 2)
        throw std::invalid_argument("train_pointwise: need positive and negative instances");

    KnowledgeScorer model(ranking_vocabulary(corpus, kb), config, kb.domains());
    AugmentConfig ena;
    ena.ena_probability = config.ena_probability;
    ena.ena_delete_prob = config.ena_delete_prob;
    AdamW opt({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(text::mix_seed(config.seed, "pointwise-train"));
    model.params().zero_grad();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<PointInstance> instances;
        for (std::size_t di : labeled) {
            const auto& refs = corpus[di].label->knowledge_refs;
            for (const auto& r : refs) instances.push_back({di, *kb.find(r), true});
            for (std::size_t s : sample_negatives(refs, kb, corpus[di], config.negatives * refs.size(), rng))
                instances.push_back({di, s, false});
        }
        rng.shuffle(instances);
        double total = 0;
        const std::size_t bs = static_cast<std::size_t>(config.batch_size);
        for (std::size_t start = 0; start < instances.size(); start += bs) {
            const std::size_t end = std::min(instances.size(), start + bs);
            for (std::size_t i = start; i < end; ++i) {
                const auto& inst = instances[i];
                const auto& snippet = kb[inst.snippet];
                const Dialogue d = augment_entity_name(corpus[inst.dialogue], snippet, inst.label, ena, rng);
                const auto& gt = corpus[inst.dialogue].label->knowledge_refs.front();
                const auto features =
                    extract_sparse_features(d, snippet, last_mentioned_entity(d, kb.entities()), config.variant);
                std::optional<EntityCandidates> cands;
                if (config.use_mtl) {
                    const auto gt_entity = kb.entity(gt.domain, gt.entity_id);
                    cands = sample_entity_candidates(kb, d, *gt_entity, config.entity_candidates, rng);
                }
                ad::Tape tape;
                auto loss = model.pointwise_loss(tape, model.history_text(d), snippet, features, inst.label,
                                                 cands ? &*cands : nullptr, model.domain_index(gt.domain));
                total += loss.scalar();
                tape.backward(loss);
            }
            opt.step(model.params(), 1.0 / static_cast<double>(end - start));
        }
        model.epoch_losses.push_back(instances.empty() ? 0.0 : total / static_cast<double>(instances.size()));
    }
    return model;
}

RankedList pointwise_rank(const KnowledgeScorer& model, const Dialogue& dialogue, const KnowledgeBase& kb,
                          std::vector<std::size_t> candidates, double alpha, std::size_t top) {
    if (candidates.empty()) {
        candidates.resize(kb.size());
        for (std::size_t i = 0; i < kb.size(); ++i) candidates[i] = i;
    }
    const std::string history = model.history_text(dialogue);
    const auto last = last_mentioned_entity(dialogue, kb.entities());
    RankedList out{dialogue.id, {}};
    for (std::size_t i : candidates) {
        const auto f = extract_sparse_features(dialogue, kb[i], last, model.config().variant);
        out.items.push_back({kb[i].ref(), model.probability(history, kb[i], f, alpha, model.config().alpha_mask)});
    }
    sort_ranked(out.items);
    if (out.items.size() > top) out.items.resize(top);
    return out;
}

KfoldDecode kfold_pointwise_decode(const Corpus& corpus, const KnowledgeBase& kb, std::size_t k, const RankConfig& config,
                                   const CandidateFn& candidates, std::uint64_t seed) {
    KfoldDecode out;
    out.ranked.resize(corpus.size());
    out.fold_of.assign(corpus.size(), SIZE_MAX);
    const auto folds = split_kfold(corpus.size(), k, seed);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<char> held(corpus.size(), 0);
        for (std::size_t i : folds[f]) held[i] = 1;
        Corpus train;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            if (!held[i]) train.push_back(corpus[i]);
        RankConfig fc = config;
        fc.seed = text::mix_seed(seed, "fold-" + std::to_string(f));
        std::optional<KnowledgeScorer> model;
        try {
            model.emplace(train_pointwise(train, kb, fc));
        } catch (const std::exception& e) {
            throw std::runtime_error("k-fold decoding: training fold " + std::to_string(f) + " failed: " + e.what());
        }
        for (std::size_t i : folds[f]) {
            out.fold_of[i] = f;
            if (!usable(corpus[i])) continue;
            out.ranked[i] = pointwise_rank(*model, corpus[i], kb,
                                           candidates ? candidates(corpus[i]) : std::vector<std::size_t>{}, config.alpha);
        }
    }
    return out;
}

ListwiseData build_listwise_training_data(const Corpus& corpus, const KnowledgeBase& kb, std::size_t k,
                                          const RankConfig& config, const CandidateFn& candidates, std::uint64_t seed) {
    const auto decoded = kfold_pointwise_decode(corpus, kb, k, config, candidates, seed);
    ListwiseData data;
    data.fold_of = decoded.fold_of;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!decoded.ranked[i]) continue;
        const auto& ranked = *decoded.ranked[i];
        const auto& gt = corpus[i].label->knowledge_refs;
        std::optional<std::size_t> hit;
        for (std::size_t r = 0; r < ranked.items.size() && !hit; ++r)
            if (std::find(gt.begin(), gt.end(), ranked.items[r].ref) != gt.end()) hit = r;
        if (!hit) {
            ++data.dropped;
            continue;
        }
        ListwiseInstance inst{i, {}, *hit, decoded.fold_of[i]};
        for (const auto& it : ranked.items) inst.candidates.push_back(it.ref);
        data.instances.push_back(std::move(inst));
    }
    return data;
}

namespace {

ad::Var list_logits(ad::Tape& tape, const KnowledgeScorer& model, const Dialogue& dialogue, const KnowledgeBase& kb,
                    const std::vector<KnowledgeRef>& candidates, double alpha) {
    const std::string history = model.history_text(dialogue);
    const auto last = last_mentioned_entity(dialogue, kb.entities());
    std::vector<ad::Var> logits;
    for (const auto& ref : candidates) {
        const auto& s = snippet_for(kb, ref);
        const auto f = extract_sparse_features(dialogue, s, last, model.config().variant);
        logits.push_back(model.forward(tape, history, s, f, alpha, model.config().alpha_mask).logit);
    }
    return ad::concat_cols(logits);
}

}  // namespace

KnowledgeScorer train_listwise(const KnowledgeScorer& warm_start, const Corpus& corpus, const KnowledgeBase& kb,
                               const std::vector<ListwiseInstance>& instances, const RankConfig& config) {
    if (instances.empty()) throw std::invalid_argument("train_listwise: no instances");
    if (config.batch_size < 1 || config.epochs < 0) throw std::invalid_argument("train_listwise: bad batch size or epochs");
    KnowledgeScorer model = warm_start;
    RankConfig c = config;
    c.encoder = warm_start.config().encoder;
    model.mutable_config() = c;
    model.epoch_losses.clear();
    for (auto* p : model.params().all()) {
        p->m.setZero(p->value.rows(), p->value.cols());
        p->v.setZero(p->value.rows(), p->value.cols());
    }
    model.params().zero_grad();
    AdamW opt({c.learning_rate, 0.9, 0.999, 1e-8, c.weight_decay});
    Rng rng(text::mix_seed(c.seed, "listwise-train"));
    std::vector<std::size_t> order(instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t bs = static_cast<std::size_t>(c.batch_size);
    for (int epoch = 0; epoch < c.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            for (std::size_t i = start; i < end; ++i) {
                const auto& inst = instances[order[i]];
                if (inst.candidates.empty() || inst.true_index >= inst.candidates.size())
                    throw std::invalid_argument("train_listwise: malformed instance");
                ad::Tape tape;
                auto loss = ad::cross_entropy(list_logits(tape, model, corpus.at(inst.dialogue), kb, inst.candidates, 1.0),
                                              static_cast<Eigen::Index>(inst.true_index));
                total += loss.scalar();
                tape.backward(loss);
            }
            opt.step(model.params(), 1.0 / static_cast<double>(end - start));
        }
        model.epoch_losses.push_back(total / static_cast<double>(order.size()));
    }
    return model;
}

std::vector<double> listwise_distribution(const KnowledgeScorer& model, const Dialogue& dialogue,
                                          const KnowledgeBase& kb, const std::vector<KnowledgeRef>& candidates,
                                          double alpha) {
    if (candidates.empty()) throw std::invalid_argument("listwise_rank: empty candidate list");
    ad::Tape tape;
    const ad::Matrix p = ad::softmax_rows(list_logits(tape, model, dialogue, kb, candidates, alpha).value());
    return std::vector<double>(p.data(), p.data() + p.size());
}

RankedList listwise_rank(const KnowledgeScorer& model, const Dialogue& dialogue, const KnowledgeBase& kb,
                         const std::vector<KnowledgeRef>& candidates, double alpha) {
    const auto p = listwise_distribution(model, dialogue, kb, candidates, alpha);
    RankedList out{dialogue.id, {}};
    for (std::size_t i = 0; i < candidates.size(); ++i) out.items.push_back({candidates[i], p[i]});
    sort_ranked(out.items);
    return out;
}

RankedList ensemble_rank(const std::vector<RankedList>& systems, std::size_t top) {
    if (systems.empty()) throw std::invalid_argument("ensemble_rank: no systems");
    std::map<KnowledgeRef, double> sums;
    for (const auto& s : systems)
        for (const auto& it : s.items) sums[it.ref] += it.probability;
    RankedList out{systems.front().turn_id, {}};
    for (const auto& [ref, p] : sums) out.items.push_back({ref, p});
    sort_ranked(out.items);
    if (out.items.size() > top) out.items.resize(top);
    return out;
}

json ranked_to_json(const RankedList& list) {
    json refs = json::array(), scores = json::array();
    for (const auto& it : list.items) {
        refs.push_back(ref_to_json(it.ref));
        scores.push_back(it.probability);
    }
    return {{"turn_id", list.turn_id}, {"target", true}, {"knowledge", refs}, {"scores", scores}};
}

RankedList ranked_from_json(const json& j) {
    RankedList out;
    out.turn_id = j.value("turn_id", std::string());
    const auto& refs = j.at("knowledge");
    const json scores = j.value("scores", json::array());
    for (std::size_t i = 0; i < refs.size(); ++i)
        out.items.push_back({ref_from_json(refs[i]), i < scores.size() ? scores[i].get<double>() : 0.0});
    return out;
}

}  // namespace kgd
