#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgd/metrics.hpp"

namespace kgd {

struct PoolCandidate {
    std::string text;
    std::string system_id;
    std::size_t rank = 1;  // 1-based within its system
    double logprob = 0;
};

struct CandidatePool {
    std::string turn_id;
    std::vector<PoolCandidate> candidates;

    // (system, rank) unique and ranks contiguous from 1 per system.
    void validate() const;
};

inline constexpr std::size_t kConsensusFeatures = 10;
using FeatureVector = std::array<double, kConsensusFeatures>;
using ConsensusWeights = std::array<double, kConsensusFeatures>;

// bleu1..4, rouge1, rouge2, rougeL, meteor, chrf, reciprocal_rank
const std::array<std::string, kConsensusFeatures>& consensus_feature_names();

// Similarity features: mean over the other candidates of metric(candidate,
// peer as reference); zero for a singleton pool. Last feature: 1 / rank.
FeatureVector extract_features(const CandidatePool& pool, std::size_t index);
std::vector<FeatureVector> pool_features(const CandidatePool& pool);

double weighted_score(const ConsensusWeights& w, const FeatureVector& f);
// true when a should win a score tie against b.
bool tie_break_prefers(const PoolCandidate& a, const PoolCandidate& b);

std::size_t consensus_select(const CandidatePool& pool, const ConsensusWeights& weights);
std::size_t consensus_select(const CandidatePool& pool, const std::vector<FeatureVector>& features,
                             const ConsensusWeights& weights);

struct TuneConfig {
    int restarts = 5;
    int directions_per_round = 3;
    int max_rounds = 25;
    std::uint64_t seed = 0;
};

struct TuneResult {
    ConsensusWeights weights{};
    double initial_bleu = 0;
    double final_bleu = 0;
    std::size_t accepted_moves = 0;
};

// Corpus BLEU-4 of the consensus selections.
double consensus_bleu(const std::vector<CandidatePool>& pools, const std::vector<std::vector<FeatureVector>>& features,
                      const std::vector<std::string>& references, const ConsensusWeights& weights);

// Exact line searches over the piecewise-constant objective along each
// coordinate and a few random directions; only improving moves are taken.
// The best of the random restarts (the first starts from `init`) is returned.
TuneResult tune_weights(const std::vector<CandidatePool>& pools, const std::vector<std::string>& references,
                        const ConsensusWeights& init, const TuneConfig& config);

nlohmann::json weights_to_json(const ConsensusWeights& w);
ConsensusWeights weights_from_json(const nlohmann::json& j);
ConsensusWeights default_weights();

// One JSON record per line: {turn_id, system_id, rank, logprob, text}.
std::string pools_to_jsonl(const std::vector<CandidatePool>& pools);
std::vector<CandidatePool> pools_from_jsonl(const std::string& content);

}  // namespace kgd
