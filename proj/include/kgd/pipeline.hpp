#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgd/augment.hpp"
#include "kgd/consensus.hpp"
#include "kgd/corpus.hpp"
#include "kgd/detect.hpp"
#include "kgd/entity_track.hpp"
#include "kgd/generate.hpp"
#include "kgd/metrics.hpp"
#include "kgd/rank.hpp"

namespace kgd {

inline constexpr const char* kToolkitVersion = "1.0.0";

// Missing or stale upstream artifacts.
class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string doc;
};

// Flat "key = value" configuration ('#' starts a comment). Every key has a
// documented default; relative paths resolve against the config file's
// directory.
class PipelineConfig {
public:
    static const std::vector<ConfigKey>& keys();

    PipelineConfig();
    static PipelineConfig parse(const std::string& content, const std::filesystem::path& base_dir = ".");
    static PipelineConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    // "a.b=1,c.d=x" (commas or newlines separate entries).
    void apply_overrides(const std::string& overrides);

    const std::string& get(const std::string& key) const;
    double number(const std::string& key) const;
    long integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    // Empty when the key is unset.
    std::filesystem::path path(const std::string& key) const;
    std::uint64_t seed() const;

    // Seed present, numeric ranges sane, input paths exist.
    void validate() const;
    // Sorted "key = value" lines; hashing this identifies the configuration.
    std::string canonical() const;

    AugmentConfig augment_config() const;
    LshConfig lsh_config() const;
    EncoderConfig encoder_config() const;
    PairTrainConfig detect_config() const;
    PairTrainConfig track_train_config() const;
    EntityTrackConfig track_config() const;
    RankConfig rank_config() const;
    RankConfig listwise_config() const;
    GenTrainConfig generate_config() const;
    TuneConfig tune_config() const;
    ErrorFixConfig error_fix_config() const;

    std::filesystem::path output_dir() const;

private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_dir_;
};

// ------------------------------------------------------------ end to end

// Pluggable stage implementations. Components only ever see unlabeled
// dialogues.
struct DecodeComponents {
    std::function<double(const Dialogue&)> detect;
    std::function<std::vector<EntityRef>(const Dialogue&)> track;
    // Candidate indices from tracking (empty = whole knowledge base).
    std::function<RankedList(const Dialogue&, const std::vector<std::size_t>&)> select;
    // Pooled n-best candidates for the turn (any number of systems).
    std::function<CandidatePool(const Dialogue&, const RankedList&)> generate;
    // Index of the chosen pool candidate; the first candidate when unset.
    std::function<std::size_t(const CandidatePool&)> choose;
};

struct TurnPrediction {
    std::string dialogue_id;
    double detection_probability = 0;
    bool target = false;
    std::vector<EntityRef> entities;
    std::optional<RankedList> ranked;
    CandidatePool pool;
    std::optional<std::string> response;
};

Corpus strip_labels(const Corpus& corpus);

// detect -> (positive turns) track -> select -> generate -> choose.
std::vector<TurnPrediction> end_to_end_decode(const Corpus& corpus, const KnowledgeBase& kb,
                                              const DecodeComponents& components);

// DSTC labels schema: {target:false} or {target:true, knowledge:[...], response}.
nlohmann::json predictions_to_labels(const std::vector<TurnPrediction>& predictions);
// Problems found in a labels array; empty when valid. With a knowledge base,
// knowledge references must resolve.
std::vector<std::string> validate_labels(const nlohmann::json& labels, std::size_t expected_count,
                                         const KnowledgeBase* kb = nullptr);

struct EvaluationReport {
    metrics::PRF detection;
    metrics::RankingScores selection;
    metrics::MetricReport generation;
    std::size_t turns = 0;
    std::size_t knowledge_seeking = 0;

    nlohmann::json to_json() const;
};
// Selection and generation are scored over reference knowledge-seeking turns;
// a missing prediction counts as a miss (and an empty response).
EvaluationReport evaluate_labels(const nlohmann::json& predictions, const Corpus& references);

// Oracle components answering from gold labels held outside the corpus that
// is decoded (used to check the plumbing end to end).
DecodeComponents oracle_components(const Corpus& gold, const KnowledgeBase& kb);

// ------------------------------------------------------------ stages

enum class Stage { Augment, TrainDetect, TrainSelect, TrainGenerate, Decode, Ensemble, TuneConsensus, Evaluate };
Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);
std::vector<Stage> stage_dependencies(Stage stage);

struct StageResult {
    std::vector<std::filesystem::path> outputs;
    std::filesystem::path manifest;
};

std::string file_hash(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& output_dir, Stage stage);
// Throws DependencyError naming the stage to run when an upstream manifest is
// missing or an artifact it lists is absent or changed.
void check_dependencies(Stage stage, const std::filesystem::path& output_dir);

StageResult run_stage(Stage stage, const PipelineConfig& config);

}  // namespace kgd
