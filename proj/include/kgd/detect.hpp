#pragma once

#include <map>
#include <string>
#include <vector>

#include "kgd/corpus.hpp"
#include "kgd/metrics.hpp"
#include "kgd/models.hpp"

namespace kgd {

struct DetectionExample {
    std::string dialogue_id;
    std::string context;
    bool label = false;
};

// One example per labeled dialogue (its final user turn). Unlabeled dialogues
// are skipped and their ids appended to `skipped` when given.
std::vector<DetectionExample> build_detection_examples(const Corpus& corpus, std::size_t max_tokens,
                                                       std::vector<std::string>* skipped = nullptr);

struct DetectionPrediction {
    std::string dialogue_id;
    double probability = 0;
    bool label = false;
};
using DetectionTable = std::vector<DetectionPrediction>;

struct SystemDetections {
    std::string system_id;
    DetectionTable predictions;
};

struct ErrorFixConfig {
    std::string base_system_id;
    double delta_d = 0.3;
};

// Keeps the base system's labels, flipping one only when the base is within
// delta_d of 0.5 and a strict majority of the other systems disagree.
// Probability is the mean over systems. Rows follow the base system's order.
DetectionTable error_fixing_ensemble(const std::vector<SystemDetections>& systems, const ErrorFixConfig& config);

metrics::PRF detection_metrics(const DetectionTable& predictions, const std::map<std::string, bool>& references);
std::map<std::string, bool> detection_references(const Corpus& corpus);

// Detection as single-sentence classification: the tagged history is
// sentence 1 and sentence 2 is empty.
PairClassifier train_detector(const Corpus& corpus, const PairTrainConfig& config, std::size_t max_tokens);
DetectionTable predict_detection(const SentencePairScorer& scorer, const Corpus& corpus, std::size_t max_tokens);

nlohmann::json detection_to_json(const DetectionTable& table);
DetectionTable detection_from_json(const nlohmann::json& j);

}  // namespace kgd
