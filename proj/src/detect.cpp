#include "kgd/detect.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <unordered_map>

namespace kgd {

std::vector<DetectionExample> build_detection_examples(const Corpus& corpus, std::size_t max_tokens,
                                                       std::vector<std::string>* skipped) {
    std::vector<DetectionExample> out;
    for (const auto& d : corpus) {
        if (!d.label) {
            std::cerr << "warning: dialogue " << d.id << " has no label, skipped\n";
            if (skipped) skipped->push_back(d.id);
            continue;
        }
        out.push_back({d.id, linearize_history(d, max_tokens), d.label->is_knowledge_seeking});
    }
    return out;
}

DetectionTable error_fixing_ensemble(const std::vector<SystemDetections>& systems, const ErrorFixConfig& config) {
    if (!(config.delta_d >= 0.0 && config.delta_d <= 1.0)) throw std::invalid_argument("delta_d must lie in [0, 1]");
    const SystemDetections* base = nullptr;
    for (const auto& s : systems)
        if (s.system_id == config.base_system_id) base = &s;
    if (!base) throw std::invalid_argument("base system '" + config.base_system_id + "' not among inputs");

    std::vector<std::unordered_map<std::string, const DetectionPrediction*>> lookup(systems.size());
    for (std::size_t s = 0; s < systems.size(); ++s) {
        for (const auto& p : systems[s].predictions) lookup[s][p.dialogue_id] = &p;
        if (lookup[s].size() != base->predictions.size())
            throw std::invalid_argument("system '" + systems[s].system_id + "' does not cover the same dialogues");
    }

    DetectionTable out;
    out.reserve(base->predictions.size());
    for (const auto& bp : base->predictions) {
        double mean = 0;
        std::size_t seen = 0, aux = 0, disagree = 0;
        for (std::size_t s = 0; s < systems.size(); ++s) {
            auto it = lookup[s].find(bp.dialogue_id);
            if (it == lookup[s].end())
                throw std::invalid_argument("dialogue " + bp.dialogue_id + " missing from system '" +
                                            systems[s].system_id + "'");
            ++seen;
            mean += (it->second->probability - mean) / static_cast<double>(seen);
            if (&systems[s] == base) continue;
            ++aux;
            if (it->second->label != bp.label) ++disagree;
        }
        bool label = bp.label;
        if (std::abs(bp.probability - 0.5) < config.delta_d && 2 * disagree > aux) label = !label;
        out.push_back({bp.dialogue_id, mean, label});
    }
    return out;
}

metrics::PRF detection_metrics(const DetectionTable& predictions, const std::map<std::string, bool>& references) {
    std::vector<bool> pred, ref;
    for (const auto& p : predictions) {
        auto it = references.find(p.dialogue_id);
        if (it == references.end()) throw std::invalid_argument("no reference for dialogue " + p.dialogue_id);
        pred.push_back(p.label);
        ref.push_back(it->second);
    }
    if (pred.size() != references.size()) throw std::invalid_argument("predictions and references are not aligned");
    return metrics::precision_recall_f1(pred, ref);
}

std::map<std::string, bool> detection_references(const Corpus& corpus) {
    std::map<std::string, bool> out;
    for (const auto& d : corpus)
        if (d.label) out[d.id] = d.label->is_knowledge_seeking;
    return out;
}

PairClassifier train_detector(const Corpus& corpus, const PairTrainConfig& config, std::size_t max_tokens) {
    std::vector<PairExample> examples;
    for (const auto& e : build_detection_examples(corpus, max_tokens)) examples.push_back({e.context, "", e.label});
    return train_pair_classifier(examples, config);
}

DetectionTable predict_detection(const SentencePairScorer& scorer, const Corpus& corpus, std::size_t max_tokens) {
    DetectionTable out;
    for (const auto& d : corpus) {
        const double p = scorer.score(linearize_history(d, max_tokens), "");
        out.push_back({d.id, p, p >= 0.5});
    }
    return out;
}

nlohmann::json detection_to_json(const DetectionTable& table) {
    auto j = nlohmann::json::array();
    for (const auto& p : table) j.push_back({{"dialogue_id", p.dialogue_id}, {"probability", p.probability}, {"target", p.label}});
    return j;
}

DetectionTable detection_from_json(const nlohmann::json& j) {
    DetectionTable out;
    for (const auto& r : j) out.push_back({r.at("dialogue_id").get<std::string>(), r.at("probability").get<double>(),
                                           r.at("target").get<bool>()});
    return out;
}

}  // namespace kgd
