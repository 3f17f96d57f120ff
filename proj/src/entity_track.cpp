#include "kgd/entity_track.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "kgd/text.hpp"

namespace kgd {

namespace {

std::vector<std::string> name_tokens(const std::string& name) { return text::word_tokens(name); }

bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

bool contains(const std::vector<EntityRef>& v, const EntityRef& e) { return std::find(v.begin(), v.end(), e) != v.end(); }

}  // namespace

TrackMethod parse_track_method(const std::string& name) {
    if (name == "exact") return TrackMethod::Exact;
    if (name == "fuzzy") return TrackMethod::Fuzzy;
    if (name == "learned") return TrackMethod::Learned;
    throw std::invalid_argument("unknown entity tracking method '" + name + "'");
}

void EntityTrackConfig::validate() const {
    if (!(fuzzy_threshold >= 0 && fuzzy_threshold <= 1)) throw std::invalid_argument("fuzzy_threshold must lie in [0, 1]");
    if (!(delta_e >= 0 && delta_e <= 1)) throw std::invalid_argument("delta_e must lie in [0, 1]");
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double normalized_similarity(const std::string& a, const std::string& b) {
    const std::size_t m = std::max(a.size(), b.size());
    if (m == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

double window_similarity(const std::string& name, const std::string& utterance) {
    const auto key = name_tokens(name);
    const auto words = text::word_tokens(utterance);
    if (key.empty() || words.size() < key.size()) return 0.0;
    const std::string target = text::join(key);
    double best = 0.0;
    for (std::size_t s = 0; s + key.size() <= words.size(); ++s) {
        const std::vector<std::string> win(words.begin() + static_cast<std::ptrdiff_t>(s),
                                           words.begin() + static_cast<std::ptrdiff_t>(s + key.size()));
        best = std::max(best, normalized_similarity(text::join(win), target));
    }
    return best;
}

double best_window_similarity(const std::string& name, const Dialogue& dialogue) {
    double best = 0.0;
    for (const auto& t : dialogue.turns) best = std::max(best, window_similarity(name, t.text));
    return best;
}

std::vector<EntityRef> exact_match_entities(const Dialogue& dialogue, const KnowledgeBase& kb) {
    std::vector<std::vector<std::string>> turns;
    for (const auto& t : dialogue.turns) turns.push_back(text::word_tokens(t.text));
    std::vector<EntityRef> out;
    for (const auto& e : kb.entities()) {
        const auto key = name_tokens(e.name);
        for (const auto& words : turns) {
            if (contains_run(words, key)) {
                out.push_back(e);
                break;
            }
        }
    }
    return out;
}

std::vector<EntityRef> fuzzy_match_entities(const Dialogue& dialogue, const KnowledgeBase& kb, double threshold) {
    if (!(threshold >= 0 && threshold <= 1)) throw std::invalid_argument("fuzzy threshold must lie in [0, 1]");
    std::vector<EntityRef> out;
    for (const auto& e : kb.entities())
        if (threshold <= 0.0 || best_window_similarity(e.name, dialogue) >= threshold) out.push_back(e);
    return out;
}

std::string entity_sentence(const std::string& name) { return std::string(text::kEnt) + " " + name; }

std::vector<EntityRef> track_entities(const SentencePairScorer& scorer, const Dialogue& dialogue,
                                      const KnowledgeBase& kb, double delta_e, std::size_t max_tokens) {
    const std::string history = linearize_history(dialogue, max_tokens);
    std::vector<EntityRef> out;
    for (const auto& e : kb.entities())
        if (scorer.score(history, entity_sentence(e.name)) > delta_e) out.push_back(e);
    return out;
}

std::vector<EntityRef> track_entities(const EntityTrackConfig& config, const SentencePairScorer* scorer,
                                      const Dialogue& dialogue, const KnowledgeBase& kb, std::size_t max_tokens) {
    config.validate();
    switch (config.method) {
        case TrackMethod::Exact:
            return exact_match_entities(dialogue, kb);
        case TrackMethod::Fuzzy:
            return fuzzy_match_entities(dialogue, kb, config.fuzzy_threshold);
        case TrackMethod::Learned:
            if (!scorer) throw std::invalid_argument("learned entity tracking needs a trained scorer");
            return track_entities(*scorer, dialogue, kb, config.delta_e, max_tokens);
    }
    return {};
}

std::vector<EntityRef> reference_entities(const Dialogue& dialogue, const KnowledgeBase& kb) {
    std::vector<EntityRef> out;
    if (!dialogue.label) return out;
    for (const auto& r : dialogue.label->knowledge_refs) {
        auto e = kb.entity(r.domain, r.entity_id);
        if (!e) throw std::invalid_argument("dialogue " + dialogue.id + " references unknown entity " + r.domain + "/" +
                                            r.entity_id);
        if (!contains(out, *e)) out.push_back(*e);
    }
    return out;
}

std::vector<PairExample> build_tracking_examples(const Corpus& corpus, const KnowledgeBase& kb,
                                                 std::size_t negatives, std::size_t max_tokens, Rng& rng,
                                                 double mentioned_fraction) {
    std::vector<PairExample> out;
    for (const auto& d : corpus) {
        if (!d.label || !d.label->is_knowledge_seeking) continue;
        const auto refs = reference_entities(d, kb);
        if (refs.empty()) continue;
        const std::string history = linearize_history(d, max_tokens);
        for (const auto& e : refs) out.push_back({history, entity_sentence(e.name), true});

        std::vector<EntityRef> mentioned, others;
        const auto seen = exact_match_entities(d, kb);
        for (const auto& e : kb.entities()) {
            if (contains(refs, e)) continue;
            (contains(seen, e) ? mentioned : others).push_back(e);
        }
        std::size_t from_mentioned = std::min(
            mentioned.size(), static_cast<std::size_t>(std::floor(mentioned_fraction * static_cast<double>(negatives))));
        for (std::size_t i : rng.sample_without_replacement(mentioned.size(), from_mentioned))
            out.push_back({history, entity_sentence(mentioned[i].name), false});
        for (std::size_t i : rng.sample_without_replacement(others.size(), negatives - from_mentioned))
            out.push_back({history, entity_sentence(others[i].name), false});
    }
    return out;
}

std::vector<std::size_t> collect_candidate_indices(const std::vector<EntityRef>& entities, const KnowledgeBase& kb) {
    std::set<std::size_t> picked;
    for (const auto& e : entities) {
        for (std::size_t i : kb.snippets_of(e.domain, e.entity_id)) picked.insert(i);
        for (std::size_t i : kb.snippets_of(e.domain, kDomainLevel)) picked.insert(i);
    }
    return {picked.begin(), picked.end()};
}

std::vector<KnowledgeSnippet> collect_candidates(const std::vector<EntityRef>& entities, const KnowledgeBase& kb) {
    std::vector<KnowledgeSnippet> out;
    for (std::size_t i : collect_candidate_indices(entities, kb)) out.push_back(kb[i]);
    return out;
}

double entity_recall(const std::vector<std::vector<EntityRef>>& predicted,
                     const std::vector<std::vector<EntityRef>>& references) {
    if (predicted.size() != references.size()) throw std::invalid_argument("entity lists are not aligned");
    std::size_t total = 0, hit = 0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        for (const auto& r : references[i]) {
            ++total;
            if (contains(predicted[i], r)) ++hit;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace kgd
