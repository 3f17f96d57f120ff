#pragma once

#include "kgd/rank.hpp"
#include "kgd/synthetic.hpp"

namespace fixtures {

inline kgd::RankConfig small_rank_config(std::uint64_t seed) {
    kgd::RankConfig c;
    c.seed = seed;
    c.encoder.dim = 6;
    c.encoder.trigram_buckets = 64;
    c.encoder.max_positions = 96;
    c.max_history_tokens = 64;
    c.variant = kgd::SparseVariant::WD2;
    return c;
}

struct Scene {
    kgd::KnowledgeBase kb;
    kgd::Corpus corpus;
};

inline Scene mini_scene(std::size_t dialogues, std::uint64_t seed) {
    kgd::synthetic::MiniCorpusConfig mc;
    mc.dialogues = dialogues;
    mc.seed = seed;
    Scene s{kgd::synthetic::mini_knowledge_base(), {}};
    s.corpus = kgd::synthetic::mini_dialogues(s.kb, mc);
    return s;
}

inline kgd::KnowledgeScorer scorer_for(const Scene& s, const kgd::RankConfig& c) {
    return kgd::KnowledgeScorer(kgd::ranking_vocabulary(s.corpus, s.kb), c, s.kb.domains());
}

// First dialogue whose label points at a named entity.
inline const kgd::Dialogue& named_turn(const Scene& s) {
    for (const auto& d : s.corpus)
        if (d.label && d.label->is_knowledge_seeking && !d.label->knowledge_refs.front().is_domain_level()) return d;
    throw std::runtime_error("no named knowledge-seeking turn");
}

}  // namespace fixtures
