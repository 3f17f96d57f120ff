#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kgd/augment.hpp"
#include "kgd/corpus.hpp"
#include "kgd/encoder.hpp"
#include "kgd/models.hpp"
#include "kgd/params.hpp"
#include "kgd/random.hpp"

namespace kgd {

enum class SparseVariant { WD, WD2 };
SparseVariant parse_sparse_variant(const std::string& name);
std::string to_string(SparseVariant v);

using FeatureMask = std::array<bool, 4>;
inline constexpr FeatureMask kAllFeatures = {true, true, true, true};

struct SparseFeatures {
    static constexpr int kCount = 4;
    double is_domain_level = 0;
    double is_last_entity = 0;
    double unigram_in_dialogue = 0;
    double bigram_in_dialogue = 0;

    std::array<double, kCount> values() const {
        return {is_domain_level, is_last_entity, unigram_in_dialogue, bigram_in_dialogue};
    }
    // 1 x 4 row; masked-in indicators are multiplied by alpha.
    ad::Matrix row(double alpha = 1.0, const FeatureMask& mask = kAllFeatures) const;
};

// Named (non domain-level) entity whose name occurs rightmost in the
// utterances by exact token match; later turns win, then later start, then
// longer names.
std::optional<EntityRef> last_mentioned_entity(const Dialogue& dialogue, const std::vector<EntityRef>& entities);

SparseFeatures extract_sparse_features(const Dialogue& dialogue, const KnowledgeSnippet& snippet,
                                       const std::vector<EntityRef>& entities, SparseVariant variant);
// Same, with the last mentioned entity already known.
SparseFeatures extract_sparse_features(const Dialogue& dialogue, const KnowledgeSnippet& snippet,
                                       const std::optional<EntityRef>& last_entity, SparseVariant variant);

bool is_stopword(const std::string& token);

// Negative knowledge for a labeled turn, drawn round-robin from
// (a) the whole knowledge base, (b) other knowledge of entities mentioned in the
// dialogue, (c) knowledge of mentioned non-ground-truth entities. Pools that
// run dry are skipped. Returned as knowledge-base indices.
struct NegativePools {
    std::vector<std::size_t> whole;
    std::vector<std::size_t> mentioned;
    std::vector<std::size_t> other_entities;
};
NegativePools negative_pools(const std::vector<KnowledgeRef>& ground_truth, const KnowledgeBase& kb,
                             const Dialogue& dialogue);
std::vector<std::size_t> sample_negatives(const std::vector<KnowledgeRef>& ground_truth, const KnowledgeBase& kb,
                                          const Dialogue& dialogue, std::size_t count, Rng& rng);

struct EntityCandidates {
    std::vector<EntityRef> entities;
    std::size_t true_index = 0;
};
// n_total - 1 negatives from mentioned or same-domain entities (backfilled
// from all entities), ground truth inserted at a uniform position.
EntityCandidates sample_entity_candidates(const KnowledgeBase& kb, const Dialogue& dialogue,
                                          const EntityRef& ground_truth, std::size_t n_total, Rng& rng);

// Multi-task entity head: attention of f over the entity-name tokens H,
// value projection, per-entity sums and logits.
struct MtlHead {
    ad::Var wq, wk, wv;  // d x d
    ad::Var entity;      // d x 1
};
struct MtlOutput {
    ad::Var attention;  // 1 x T
    ad::Var weighted;   // T x d, rows g_i
    ad::Var entity_sums;  // n x d, rows s_k
    ad::Var logits;       // 1 x n
    ad::Var distribution; // 1 x n
};
using TokenSpan = std::pair<std::size_t, std::size_t>;  // [begin, end)
MtlOutput mtl_forward(ad::Var f, ad::Var H, const std::vector<TokenSpan>& spans, const MtlHead& head);
void validate_spans(const std::vector<TokenSpan>& spans, std::size_t length);

struct RankConfig {
    bool use_mtl = true;
    SparseVariant variant = SparseVariant::WD;
    int epochs = 2;
    double learning_rate = 1e-5;
    int batch_size = 16;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    double lambda_rank = 1.0;
    double lambda_domain = 1.0;
    double lambda_entity = 1.0;
    std::size_t negatives = 4;
    std::size_t entity_candidates = 4;
    double ena_probability = 0.3;
    double ena_delete_prob = 0.1;
    std::size_t max_history_tokens = 512;
    double alpha = 1.0;
    FeatureMask alpha_mask = kAllFeatures;
    EncoderConfig encoder;

    nlohmann::json to_json() const;
    static RankConfig from_json(const nlohmann::json& j);
};

struct RankedItem {
    KnowledgeRef ref;
    double probability = 0;
};
struct RankedList {
    std::string turn_id;
    std::vector<RankedItem> items;
};
// Probability descending, then (domain, entity_id, doc_id).
void sort_ranked(std::vector<RankedItem>& items);

// Shared Wide & Deep scorer over (history, "<kng> q <ans> a"):
// logit = w.f + u.alignment + b + v.sparse.
class KnowledgeScorer {
public:
    KnowledgeScorer(Vocabulary vocab, RankConfig config, std::vector<std::string> domains);

    struct Forward {
        ad::Var logit;
        ad::Var pooled;
    };
    Forward forward(ad::Tape& tape, const std::string& history, const KnowledgeSnippet& snippet,
                    const SparseFeatures& features, double alpha, const FeatureMask& mask) const;
    // Domain cross-entropy from f plus the entity-selection KL term, weighted.
    ad::Var auxiliary_loss(ad::Tape& tape, ad::Var pooled, const EntityCandidates& candidates,
                           std::size_t domain) const;
    // Point-wise instance loss; the auxiliary part is included when use_mtl.
    ad::Var pointwise_loss(ad::Tape& tape, const std::string& history, const KnowledgeSnippet& snippet,
                           const SparseFeatures& features, bool label, const EntityCandidates* candidates,
                           std::size_t domain) const;

    double probability(const std::string& history, const KnowledgeSnippet& snippet, const SparseFeatures& features,
                       double alpha, const FeatureMask& mask) const;

    std::size_t domain_index(const std::string& domain) const;
    MtlHead mtl_head(ad::Tape& tape) const;
    // Entity names joined into one token sequence with their spans.
    EncodedInput entity_input(const std::vector<EntityRef>& entities, std::vector<TokenSpan>& spans) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Vocabulary& vocab() const { return vocab_; }
    const RankConfig& config() const { return config_; }
    RankConfig& mutable_config() { return config_; }
    const std::vector<std::string>& domains() const { return domains_; }
    std::string history_text(const Dialogue& dialogue) const;

    void save(const std::filesystem::path& path, const std::string& kind) const;
    static KnowledgeScorer load(const std::filesystem::path& path, const std::string& kind);

    std::vector<double> epoch_losses;

private:
    Vocabulary vocab_;
    RankConfig config_;
    std::vector<std::string> domains_;
    ToyEncoder encoder_;
    mutable ParamStore params_;
};

Vocabulary ranking_vocabulary(const Corpus& corpus, const KnowledgeBase& kb);

// Point-wise training with online entity name augmentation.
KnowledgeScorer train_pointwise(const Corpus& corpus, const KnowledgeBase& kb, const RankConfig& config);

// Candidate indices for a turn; empty means "use the whole knowledge base".
using CandidateFn = std::function<std::vector<std::size_t>(const Dialogue&)>;

RankedList pointwise_rank(const KnowledgeScorer& model, const Dialogue& dialogue, const KnowledgeBase& kb,
                          std::vector<std::size_t> candidates, double alpha, std::size_t top = 5);

// Each fold is decoded by a point-wise model trained on the other folds.
// Entries are empty for dialogues that are not labeled knowledge-seeking.
struct KfoldDecode {
    std::vector<std::optional<RankedList>> ranked;  // per dialogue
    std::vector<std::size_t> fold_of;               // per dialogue
};
KfoldDecode kfold_pointwise_decode(const Corpus& corpus, const KnowledgeBase& kb, std::size_t k, const RankConfig& config,
                                   const CandidateFn& candidates, std::uint64_t seed);

struct ListwiseInstance {
    std::size_t dialogue = 0;  // index into the corpus
    std::vector<KnowledgeRef> candidates;
    std::size_t true_index = 0;
    std::size_t fold = 0;
};
struct ListwiseData {
    std::vector<ListwiseInstance> instances;
    std::size_t dropped = 0;
    std::vector<std::size_t> fold_of;  // per dialogue; SIZE_MAX when not decoded
};
// k point-wise models, each decoding its held-out fold; turns whose ground
// truth misses the top 5 are dropped.
ListwiseData build_listwise_training_data(const Corpus& corpus, const KnowledgeBase& kb, std::size_t k,
                                          const RankConfig& config, const CandidateFn& candidates, std::uint64_t seed);

// List-wise training starts from the point-wise weights (same architecture)
// and minimizes cross-entropy over each candidate list.
KnowledgeScorer train_listwise(const KnowledgeScorer& warm_start, const Corpus& corpus, const KnowledgeBase& kb,
                               const std::vector<ListwiseInstance>& instances, const RankConfig& config);

// Softmax over the m <= 5 candidates' logits.
std::vector<double> listwise_distribution(const KnowledgeScorer& model, const Dialogue& dialogue,
                                          const KnowledgeBase& kb, const std::vector<KnowledgeRef>& candidates,
                                          double alpha);
RankedList listwise_rank(const KnowledgeScorer& model, const Dialogue& dialogue, const KnowledgeBase& kb,
                         const std::vector<KnowledgeRef>& candidates, double alpha);

// Sum of probabilities across systems, top `top`.
RankedList ensemble_rank(const std::vector<RankedList>& systems, std::size_t top = 5);

nlohmann::json ranked_to_json(const RankedList& list);
RankedList ranked_from_json(const nlohmann::json& j);

}  // namespace kgd
