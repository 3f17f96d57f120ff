#pragma once

#include <string>
#include <vector>

#include "kgd/corpus.hpp"
#include "kgd/models.hpp"
#include "kgd/random.hpp"

namespace kgd {

enum class TrackMethod { Exact, Fuzzy, Learned };
TrackMethod parse_track_method(const std::string& name);

struct EntityTrackConfig {
    TrackMethod method = TrackMethod::Exact;
    double fuzzy_threshold = 0.8;
    double delta_e = 0.5;

    void validate() const;
};

std::size_t levenshtein(const std::string& a, const std::string& b);
// 1 - edit distance / longer length; 1 for two empty strings.
double normalized_similarity(const std::string& a, const std::string& b);

// Best similarity between `name` and any same-length window of word tokens
// of one utterance (windows joined by single spaces).
double window_similarity(const std::string& name, const std::string& utterance);
double best_window_similarity(const std::string& name, const Dialogue& dialogue);

std::vector<EntityRef> exact_match_entities(const Dialogue& dialogue, const KnowledgeBase& kb);
std::vector<EntityRef> fuzzy_match_entities(const Dialogue& dialogue, const KnowledgeBase& kb, double threshold);

// Sentence 2 for entity scoring: "<ent> name".
std::string entity_sentence(const std::string& name);

std::vector<EntityRef> track_entities(const SentencePairScorer& scorer, const Dialogue& dialogue,
                                      const KnowledgeBase& kb, double delta_e, std::size_t max_tokens);
std::vector<EntityRef> track_entities(const EntityTrackConfig& config, const SentencePairScorer* scorer,
                                      const Dialogue& dialogue, const KnowledgeBase& kb, std::size_t max_tokens);

// Ground-truth entities of a labeled turn, in reference order, deduplicated.
std::vector<EntityRef> reference_entities(const Dialogue& dialogue, const KnowledgeBase& kb);

// Positive (history, "<ent> e") for each reference entity and `negatives`
// sampled non-reference entities; up to mentioned_fraction of them come from
// entities that occur in the dialogue.
std::vector<PairExample> build_tracking_examples(const Corpus& corpus, const KnowledgeBase& kb,
                                                 std::size_t negatives, std::size_t max_tokens, Rng& rng,
                                                 double mentioned_fraction = 0.0);

// Snippet indices of all tracked entities plus the domain-level snippets of
// their domains, deduplicated, in knowledge-base order.
std::vector<std::size_t> collect_candidate_indices(const std::vector<EntityRef>& entities, const KnowledgeBase& kb);
std::vector<KnowledgeSnippet> collect_candidates(const std::vector<EntityRef>& entities, const KnowledgeBase& kb);

// Micro recall: covered reference entities / all reference entities.
double entity_recall(const std::vector<std::vector<EntityRef>>& predicted,
                     const std::vector<std::vector<EntityRef>>& references);

}  // namespace kgd
