#include "kgd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "kgd/synthetic.hpp"
#include "kgd/text.hpp"

namespace kgd {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------ config

const std::vector<ConfigKey>& PipelineConfig::keys() {
    static const std::vector<ConfigKey> k = {
        {"seed", "", "global seed (required)"},
        {"paths.logs", "", "training dialogues (DSTC logs JSON)"},
        {"paths.labels", "", "training labels"},
        {"paths.knowledge", "", "knowledge base JSON"},
        {"paths.lexicon", "", "pronunciation lexicon; letter-to-sound rules over the corpus when empty"},
        {"paths.confusion", "", "two-column confusion table for the speech round trip fake"},
        {"paths.eval_logs", "", "dialogues to decode"},
        {"paths.eval_labels", "", "references for evaluate and tune-consensus"},
        {"paths.output", "out", "artifact directory"},
        {"augment.tasks", "aei", "offline augmentation: none, aei, tst or aei,tst"},
        {"augment.tst_command", "", "shell command used as the speech round trip adapter"},
        {"augment.replace_rate_low", "0.1", "lowest replaced-word proportion"},
        {"augment.replace_rate_high", "0.3", "highest replaced-word proportion"},
        {"augment.ena_probability", "0.3", "online entity name augmentation probability"},
        {"augment.ena_delete_prob", "0.1", "per-word deletion probability in entity name augmentation"},
        {"augment.neighbor_k", "5", "phonetic neighbors considered per replacement"},
        {"augment.lsh_tables", "24", "hash tables of the neighbor index"},
        {"augment.lsh_bits", "10", "hyperplanes per hash table"},
        {"encoder.dim", "16", "toy encoder width"},
        {"encoder.trigram_buckets", "1024", "hashed character trigram buckets"},
        {"encoder.max_positions", "256", "encoder input cap"},
        {"encoder.pooling", "mean", "mean or first"},
        {"ensemble.members", "1", "independently seeded systems per model type"},
        {"detect.epochs", "10", "detection epochs"},
        {"detect.learning_rate", "1e-5", "detection learning rate"},
        {"detect.batch_size", "16", "detection batch size"},
        {"detect.weight_decay", "0.01", "AdamW weight decay"},
        {"detect.max_tokens", "512", "history block size"},
        {"detect.delta_d", "0.3", "error-fixing ensemble margin"},
        {"track.method", "learned", "exact, fuzzy or learned"},
        {"track.fuzzy_threshold", "0.8", "fuzzy match threshold"},
        {"track.delta_e", "0.5", "learned tracker threshold"},
        {"track.negatives", "4", "negative entities per positive when training the tracker"},
        {"track.mentioned_fraction", "0", "share of tracker negatives taken from mentioned entities"},
        {"track.epochs", "10", "tracker epochs"},
        {"track.learning_rate", "1e-5", "tracker learning rate"},
        {"track.batch_size", "16", "tracker batch size"},
        {"rank.use_mtl", "true", "multi-task head on the point-wise ranker"},
        {"rank.variant", "wd2", "sparse features: wd or wd2"},
        {"rank.epochs", "2", "point-wise epochs"},
        {"rank.learning_rate", "1e-5", "point-wise learning rate"},
        {"rank.batch_size", "16", "ranking batch size"},
        {"rank.weight_decay", "0.01", "AdamW weight decay"},
        {"rank.negatives", "4", "negative snippets per positive"},
        {"rank.entity_negatives", "3", "negative entities in the multi-task entity head"},
        {"rank.lambda_rank", "1", "ranking loss weight"},
        {"rank.lambda_domain", "1", "domain loss weight"},
        {"rank.lambda_entity", "1", "entity loss weight"},
        {"rank.max_history_tokens", "512", "history block size"},
        {"rank.kfold", "5", "folds used to build list-wise training data"},
        {"rank.listwise_epochs", "2", "list-wise epochs"},
        {"rank.listwise_learning_rate", "1e-5", "list-wise learning rate"},
        {"rank.alpha", "100", "sparse feature scale at list-wise inference"},
        {"rank.alpha_mask", "1111", "which sparse features alpha scales (domain, last, unigram, bigram)"},
        {"generate.epochs", "6", "generator epochs"},
        {"generate.batch_size", "32", "generator batch size"},
        {"generate.learning_rate", "1e-5", "generator learning rate"},
        {"generate.weight_decay", "0.01", "AdamW weight decay"},
        {"generate.max_history_tokens", "512", "generation context size"},
        {"generate.max_target_tokens", "96", "response length cap"},
        {"generate.p_s", "0.15", "distractor substitution probability"},
        {"generate.k_folds", "10", "folds for cross-validated selection decoding of training data"},
        {"generate.hidden", "32", "decoder width"},
        {"generate.nbest", "5", "candidates per system"},
        {"generate.interrogative_min_count", "20", "frequency for removable trailing questions"},
        {"generate.format", "entity_answer", "knowledge blocks: entity_answer or question_answer"},
        {"consensus.restarts", "5", "random restarts of weight tuning"},
        {"consensus.directions_per_round", "3", "random directions per round"},
        {"consensus.max_rounds", "25", "rounds per restart"},
    };
    return k;
}

PipelineConfig::PipelineConfig() : base_dir_(".") {
    for (const auto& k : keys()) values_[k.name] = k.default_value;
}

PipelineConfig PipelineConfig::parse(const std::string& content, const fs::path& base_dir) {
    PipelineConfig c;
    c.base_dir_ = base_dir;
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = text::normalize_whitespace(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        c.set(text::normalize_whitespace(line.substr(0, eq)), text::normalize_whitespace(line.substr(eq + 1)));
    }
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse(read_file(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

void PipelineConfig::apply_overrides(const std::string& overrides) {
    std::string entry;
    std::istringstream in(overrides);
    while (std::getline(in, entry)) {
        std::istringstream parts(entry);
        std::string item;
        while (std::getline(parts, item, ',')) {
            item = text::normalize_whitespace(item);
            if (item.empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not key=value");
            set(text::normalize_whitespace(item.substr(0, eq)), text::normalize_whitespace(item.substr(eq + 1)));
        }
    }
}

const std::string& PipelineConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double PipelineConfig::number(const std::string& key) const {
    const auto& v = get(key);
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' needs a number, got '" + v + "'");
    }
}

long PipelineConfig::integer(const std::string& key) const {
    const double x = number(key);
    if (x != std::floor(x)) throw ConfigError("config key '" + key + "' needs an integer");
    return static_cast<long>(x);
}

bool PipelineConfig::flag(const std::string& key) const {
    const auto v = text::lowercase(get(key));
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' needs true or false");
}

fs::path PipelineConfig::path(const std::string& key) const {
    const auto& v = get(key);
    if (v.empty()) return {};
    fs::path p(v);
    return p.is_absolute() ? p : base_dir_ / p;
}

std::uint64_t PipelineConfig::seed() const {
    const auto& v = get("seed");
    if (v.empty()) throw ConfigError("config key 'seed' is required");
    try {
        std::size_t used = 0;
        const auto s = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return s;
    } catch (const std::exception&) {
        throw ConfigError("seed must be a non-negative integer, got '" + v + "'");
    }
}

fs::path PipelineConfig::output_dir() const { return path("paths.output"); }

void PipelineConfig::validate() const {
    seed();
    for (const char* key : {"paths.logs", "paths.labels", "paths.knowledge"})
        if (get(key).empty()) throw ConfigError(std::string("config key '") + key + "' is required");
    for (const char* key : {"paths.logs", "paths.labels", "paths.knowledge", "paths.lexicon", "paths.confusion",
                            "paths.eval_logs", "paths.eval_labels"}) {
        const auto p = path(key);
        if (!p.empty() && !fs::exists(p)) throw ConfigError(std::string(key) + ": file not found: " + p.string());
    }
    augment_config().validate();
    track_config().validate();
    generate_config().validate();
    if (integer("ensemble.members") < 1) throw ConfigError("ensemble.members must be at least 1");
    const double dd = number("detect.delta_d");
    if (dd < 0 || dd > 1) throw ConfigError("detect.delta_d must lie in [0, 1]");
    if (number("rank.alpha") <= 0) throw ConfigError("rank.alpha must be positive");
    if (integer("rank.kfold") < 2 || integer("generate.k_folds") < 2) throw ConfigError("fold counts must be at least 2");
    if (integer("generate.nbest") < 1) throw ConfigError("generate.nbest must be at least 1");
    for (const char* key : {"detect.epochs", "track.epochs", "rank.epochs", "rank.listwise_epochs", "generate.epochs"})
        if (integer(key) < 0) throw ConfigError(std::string(key) + " must be non-negative");
    for (const char* key : {"detect.batch_size", "track.batch_size", "rank.batch_size", "generate.batch_size"})
        if (integer(key) < 1) throw ConfigError(std::string(key) + " must be positive");
    const auto tasks = get("augment.tasks");
    if (tasks != "none" && tasks != "aei" && tasks != "tst" && tasks != "aei,tst" && tasks != "tst,aei")
        throw ConfigError("augment.tasks must be none, aei, tst or aei,tst");
    if (tasks.find("tst") != std::string::npos && get("paths.confusion").empty() && get("augment.tst_command").empty())
        throw ConfigError("augment.tasks includes tst but neither paths.confusion nor augment.tst_command is set");
    const auto mask = get("rank.alpha_mask");
    if (mask.size() != 4 || mask.find_first_not_of("01") != std::string::npos)
        throw ConfigError("rank.alpha_mask must be four 0/1 digits");
    parse_sparse_variant(get("rank.variant"));
    const auto fmt = get("generate.format");
    if (fmt != "entity_answer" && fmt != "question_answer") throw ConfigError("generate.format must be entity_answer or question_answer");
}

std::string PipelineConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

AugmentConfig PipelineConfig::augment_config() const {
    AugmentConfig c;
    c.replace_rate_low = number("augment.replace_rate_low");
    c.replace_rate_high = number("augment.replace_rate_high");
    c.ena_probability = number("augment.ena_probability");
    c.ena_delete_prob = number("augment.ena_delete_prob");
    c.neighbor_k = static_cast<std::size_t>(std::max(1L, integer("augment.neighbor_k")));
    c.seed = seed();
    return c;
}

LshConfig PipelineConfig::lsh_config() const {
    LshConfig c;
    c.tables = static_cast<int>(integer("augment.lsh_tables"));
    c.bits = static_cast<int>(integer("augment.lsh_bits"));
    c.seed = text::mix_seed(seed(), "lsh");
    return c;
}

EncoderConfig PipelineConfig::encoder_config() const {
    EncoderConfig c;
    c.dim = static_cast<int>(integer("encoder.dim"));
    c.trigram_buckets = static_cast<int>(integer("encoder.trigram_buckets"));
    c.max_positions = static_cast<int>(integer("encoder.max_positions"));
    const auto pooling = get("encoder.pooling");
    if (pooling != "mean" && pooling != "first") throw ConfigError("encoder.pooling must be mean or first");
    c.pooling = pooling == "first" ? Pooling::FirstToken : Pooling::Mean;
    return c;
}

PairTrainConfig PipelineConfig::detect_config() const {
    PairTrainConfig c;
    c.epochs = static_cast<int>(integer("detect.epochs"));
    c.learning_rate = number("detect.learning_rate");
    c.batch_size = static_cast<int>(integer("detect.batch_size"));
    c.weight_decay = number("detect.weight_decay");
    c.seed = text::mix_seed(seed(), "detect");
    c.encoder = encoder_config();
    return c;
}

PairTrainConfig PipelineConfig::track_train_config() const {
    PairTrainConfig c;
    c.epochs = static_cast<int>(integer("track.epochs"));
    c.learning_rate = number("track.learning_rate");
    c.batch_size = static_cast<int>(integer("track.batch_size"));
    c.weight_decay = number("detect.weight_decay");
    c.seed = text::mix_seed(seed(), "track");
    c.encoder = encoder_config();
    return c;
}

EntityTrackConfig PipelineConfig::track_config() const {
    EntityTrackConfig c;
    c.method = parse_track_method(get("track.method"));
    c.fuzzy_threshold = number("track.fuzzy_threshold");
    c.delta_e = number("track.delta_e");
    return c;
}

RankConfig PipelineConfig::rank_config() const {
    RankConfig c;
    c.use_mtl = flag("rank.use_mtl");
    c.variant = parse_sparse_variant(get("rank.variant"));
    c.epochs = static_cast<int>(integer("rank.epochs"));
    c.learning_rate = number("rank.learning_rate");
    c.batch_size = static_cast<int>(integer("rank.batch_size"));
    c.weight_decay = number("rank.weight_decay");
    c.seed = text::mix_seed(seed(), "rank");
    c.lambda_rank = number("rank.lambda_rank");
    c.lambda_domain = number("rank.lambda_domain");
    c.lambda_entity = number("rank.lambda_entity");
    c.negatives = static_cast<std::size_t>(integer("rank.negatives"));
    c.entity_candidates = static_cast<std::size_t>(integer("rank.entity_negatives")) + 1;
    c.ena_probability = number("augment.ena_probability");
    c.ena_delete_prob = number("augment.ena_delete_prob");
    c.max_history_tokens = static_cast<std::size_t>(integer("rank.max_history_tokens"));
    c.alpha = number("rank.alpha");
    const auto mask = get("rank.alpha_mask");
    for (std::size_t i = 0; i < 4 && i < mask.size(); ++i) c.alpha_mask[i] = mask[i] == '1';
    c.encoder = encoder_config();
    return c;
}

RankConfig PipelineConfig::listwise_config() const {
    RankConfig c = rank_config();
    c.epochs = static_cast<int>(integer("rank.listwise_epochs"));
    c.learning_rate = number("rank.listwise_learning_rate");
    c.seed = text::mix_seed(seed(), "listwise");
    return c;
}

GenTrainConfig PipelineConfig::generate_config() const {
    GenTrainConfig c;
    c.epochs = static_cast<int>(integer("generate.epochs"));
    c.batch_size = static_cast<int>(integer("generate.batch_size"));
    c.learning_rate = number("generate.learning_rate");
    c.weight_decay = number("generate.weight_decay");
    c.max_history_tokens = static_cast<std::size_t>(integer("generate.max_history_tokens"));
    c.max_target_tokens = static_cast<std::size_t>(integer("generate.max_target_tokens"));
    c.p_s = number("generate.p_s");
    c.k_folds = static_cast<std::size_t>(integer("generate.k_folds"));
    c.seed = text::mix_seed(seed(), "generate");
    c.hidden = static_cast<int>(integer("generate.hidden"));
    c.format = get("generate.format") == "question_answer" ? KnowledgeBlockFormat::QuestionAnswer
                                                          : KnowledgeBlockFormat::EntityAnswer;
    c.encoder = encoder_config();
    return c;
}

TuneConfig PipelineConfig::tune_config() const {
    TuneConfig c;
    c.restarts = static_cast<int>(integer("consensus.restarts"));
    c.directions_per_round = static_cast<int>(integer("consensus.directions_per_round"));
    c.max_rounds = static_cast<int>(integer("consensus.max_rounds"));
    c.seed = text::mix_seed(seed(), "consensus");
    return c;
}

ErrorFixConfig PipelineConfig::error_fix_config() const { return {"system0", number("detect.delta_d")}; }

// ------------------------------------------------------------ end to end

Corpus strip_labels(const Corpus& corpus) {
    Corpus out = corpus;
    for (auto& d : out) d.label.reset();
    return out;
}

std::vector<TurnPrediction> end_to_end_decode(const Corpus& corpus, const KnowledgeBase& kb,
                                              const DecodeComponents& components) {
    if (!components.detect) throw PipelineError("decode: no detection component");
    const Corpus unlabeled = strip_labels(corpus);
    std::vector<TurnPrediction> out;
    for (const auto& d : unlabeled) {
        TurnPrediction p;
        p.dialogue_id = d.id;
        try {
            p.detection_probability = components.detect(d);
            p.target = p.detection_probability >= 0.5;
            if (p.target) {
                if (components.track) p.entities = components.track(d);
                if (components.select) {
                    p.ranked = components.select(d, collect_candidate_indices(p.entities, kb));
                    p.ranked->turn_id = d.id;
                }
                if (components.generate && p.ranked) {
                    p.pool = components.generate(d, *p.ranked);
                    p.pool.turn_id = d.id;
                    if (!p.pool.candidates.empty()) {
                        const std::size_t pick = components.choose ? components.choose(p.pool) : 0;
                        p.response = p.pool.candidates.at(pick).text;
                    }
                }
            }
        } catch (const std::exception& e) {
            throw PipelineError("decode failed at turn " + d.id + ": " + e.what());
        }
        out.push_back(std::move(p));
    }
    return out;
}

json predictions_to_labels(const std::vector<TurnPrediction>& predictions) {
    json out = json::array();
    for (const auto& p : predictions) {
        if (!p.target) {
            out.push_back({{"target", false}});
            continue;
        }
        json k = json::array();
        if (p.ranked)
            for (const auto& item : p.ranked->items) k.push_back(ref_to_json(item.ref));
        json rec = {{"target", true}, {"knowledge", k}};
        rec["response"] = p.response.value_or("");
        out.push_back(rec);
    }
    return out;
}

std::vector<std::string> validate_labels(const json& labels, std::size_t expected_count, const KnowledgeBase* kb) {
    std::vector<std::string> problems;
    if (!labels.is_array()) return {"labels must be an array"};
    if (labels.size() != expected_count)
        problems.push_back("expected " + std::to_string(expected_count) + " records, found " + std::to_string(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& r = labels[i];
        const std::string at = "record " + std::to_string(i) + ": ";
        if (!r.is_object()) {
            problems.push_back(at + "not an object");
            continue;
        }
        if (!r.contains("target") || !r["target"].is_boolean()) {
            problems.push_back(at + "missing boolean 'target'");
            continue;
        }
        if (!r["target"].get<bool>()) {
            if (r.contains("knowledge") && !r["knowledge"].empty()) problems.push_back(at + "knowledge on a non-target turn");
            continue;
        }
        if (!r.contains("knowledge") || !r["knowledge"].is_array()) {
            problems.push_back(at + "missing 'knowledge' array");
        } else {
            if (r["knowledge"].size() > static_cast<std::size_t>(text::kMaxRankedKnowledge))
                problems.push_back(at + "more than five knowledge entries");
            for (const auto& k : r["knowledge"]) {
                try {
                    const auto ref = ref_from_json(k);
                    if (kb && !kb->find(ref))
                        problems.push_back(at + "unknown knowledge " + ref.domain + "/" + ref.entity_id + "/" + ref.doc_id);
                } catch (const std::exception& e) {
                    problems.push_back(at + "bad knowledge entry: " + e.what());
                }
            }
        }
        if (!r.contains("response") || !r["response"].is_string()) problems.push_back(at + "missing string 'response'");
    }
    return problems;
}

json EvaluationReport::to_json() const {
    json g = json::object();
    for (const auto& [k, v] : generation.scores) g[k] = v;
    return {{"turns", turns},
            {"knowledge_seeking", knowledge_seeking},
            {"detection", {{"precision", detection.precision}, {"recall", detection.recall}, {"f1", detection.f1}}},
            {"selection", {{"mrr@5", selection.mrr5}, {"r@1", selection.r1}, {"r@5", selection.r5}}},
            {"generation", g}};
}

namespace {

std::string ref_key(const KnowledgeRef& r) { return r.domain + "|" + r.entity_id + "|" + r.doc_id; }

}  // namespace

EvaluationReport evaluate_labels(const json& predictions, const Corpus& references) {
    const auto problems = validate_labels(predictions, references.size());
    if (!problems.empty()) throw PipelineError("predictions are not valid labels: " + problems.front());
    EvaluationReport rep;
    std::vector<bool> pred, gold;
    std::vector<std::vector<std::string>> ranked, correct;
    std::vector<std::string> hyps, refs;
    for (std::size_t i = 0; i < references.size(); ++i) {
        const auto& d = references[i];
        if (!d.label) throw PipelineError("reference dialogue " + d.id + " has no label");
        const auto& p = predictions[i];
        const bool target = p["target"].get<bool>();
        pred.push_back(target);
        gold.push_back(d.label->is_knowledge_seeking);
        ++rep.turns;
        if (!d.label->is_knowledge_seeking) continue;
        ++rep.knowledge_seeking;
        std::vector<std::string> keys;
        if (target)
            for (const auto& k : p["knowledge"]) keys.push_back(ref_key(ref_from_json(k)));
        ranked.push_back(keys);
        std::vector<std::string> ok;
        for (const auto& r : d.label->knowledge_refs) ok.push_back(ref_key(r));
        correct.push_back(ok);
        hyps.push_back(target ? p["response"].get<std::string>() : "");
        refs.push_back(d.label->response.value_or(""));
    }
    rep.detection = metrics::precision_recall_f1(pred, gold);
    if (!ranked.empty()) {
        rep.selection = metrics::ranking_scores(ranked, correct);
        rep.generation = metrics::generation_report(hyps, refs);
    }
    return rep;
}

DecodeComponents oracle_components(const Corpus& gold, const KnowledgeBase& kb) {
    auto labels = std::make_shared<std::map<std::string, TurnLabel>>();
    auto dialogues = std::make_shared<std::map<std::string, Dialogue>>();
    for (const auto& d : gold) {
        if (d.label) (*labels)[d.id] = *d.label;
        (*dialogues)[d.id] = d;
    }
    auto label_of = [labels](const Dialogue& d) -> const TurnLabel& {
        auto it = labels->find(d.id);
        if (it == labels->end()) throw PipelineError("oracle has no label for " + d.id);
        return it->second;
    };
    DecodeComponents c;
    c.detect = [label_of](const Dialogue& d) { return label_of(d).is_knowledge_seeking ? 1.0 : 0.0; };
    c.track = [dialogues, &kb](const Dialogue& d) { return reference_entities(dialogues->at(d.id), kb); };
    c.select = [label_of](const Dialogue& d, const std::vector<std::size_t>&) {
        RankedList out{d.id, {}};
        for (const auto& r : label_of(d).knowledge_refs) out.items.push_back({r, 1.0});
        return out;
    };
    c.generate = [label_of](const Dialogue& d, const RankedList&) {
        CandidatePool pool{d.id, {}};
        pool.candidates.push_back({label_of(d).response.value_or(""), "oracle", 1, 0.0});
        return pool;
    };
    return c;
}

// ------------------------------------------------------------ stages

namespace {

const std::vector<std::pair<Stage, std::string>>& stage_names() {
    static const std::vector<std::pair<Stage, std::string>> n = {
        {Stage::Augment, "augment"},       {Stage::TrainDetect, "train-detect"},
        {Stage::TrainSelect, "train-select"}, {Stage::TrainGenerate, "train-generate"},
        {Stage::Decode, "decode"},         {Stage::Ensemble, "ensemble"},
        {Stage::TuneConsensus, "tune-consensus"}, {Stage::Evaluate, "evaluate"}};
    return n;
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string member_id(std::size_t m) { return "system" + std::to_string(m); }

std::string artifact(const std::string& stem, std::size_t m, const std::string& ext) {
    return stem + "_" + std::to_string(m) + ext;
}

struct Inputs {
    json files = json::object();
    void add(const std::string& name, const fs::path& p) {
        if (!p.empty()) files[name] = file_hash(p);
    }
};

StageResult finish(Stage stage, const PipelineConfig& config, const Inputs& inputs,
                   const std::vector<std::string>& outputs) {
    const auto dir = config.output_dir();
    json manifest = {{"stage", stage_name(stage)},
                     {"version", kToolkitVersion},
                     {"seed", config.seed()},
                     {"config", hex64(text::fnv1a(config.canonical()))},
                     {"inputs", inputs.files},
                     {"outputs", json::object()}};
    StageResult r;
    for (const auto& o : outputs) {
        manifest["outputs"][o] = file_hash(dir / o);
        r.outputs.push_back(dir / o);
    }
    r.manifest = manifest_path(dir, stage);
    write_file(r.manifest, manifest.dump(2) + "\n");
    return r;
}

void add_upstream(Inputs& inputs, Stage stage, const fs::path& dir) {
    for (Stage dep : stage_dependencies(stage)) {
        const auto mp = manifest_path(dir, dep);
        inputs.add("manifest:" + stage_name(dep), mp);
    }
}

json read_json(const fs::path& p) {
    try {
        return json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw PipelineError(p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

struct Data {
    KnowledgeBase kb;
    Corpus train;  // augmented training corpus
};

Data load_training(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    return {load_knowledge_base(config.path("paths.knowledge")),
            load_corpus(dir / "augmented_logs.json", dir / "augmented_labels.json")};
}

std::size_t members(const PipelineConfig& config) { return static_cast<std::size_t>(config.integer("ensemble.members")); }

std::uint64_t member_seed(std::uint64_t seed, std::size_t m) { return text::mix_seed(seed, "member#" + std::to_string(m)); }

// Candidate indices from the configured tracker.
CandidateFn candidate_fn(const EntityTrackConfig& track, std::shared_ptr<const PairClassifier> tracker,
                         const KnowledgeBase& kb, std::size_t max_tokens) {
    return [track, tracker, &kb, max_tokens](const Dialogue& d) {
        return collect_candidate_indices(track_entities(track, tracker.get(), d, kb, max_tokens), kb);
    };
}

std::shared_ptr<const PairClassifier> load_tracker(const PipelineConfig& config, std::size_t m) {
    if (config.track_config().method != TrackMethod::Learned) return nullptr;
    return std::make_shared<const PairClassifier>(PairClassifier::load(config.output_dir() / artifact("tracker", m, ".ckpt")));
}

StageResult stage_augment(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto kb = load_knowledge_base(config.path("paths.knowledge"));
    const Corpus corpus = load_corpus(config.path("paths.logs"), config.path("paths.labels"));
    const auto lex_path = config.path("paths.lexicon");
    const Lexicon lexicon = lex_path.empty() ? synthetic::corpus_lexicon(corpus, kb) : load_lexicon(lex_path);
    const auto index = PhoneticIndex::build(lexicon, config.lsh_config());
    const auto tasks_text = config.get("augment.tasks");
    AugmentTasks tasks{tasks_text.find("aei") != std::string::npos, tasks_text.find("tst") != std::string::npos};
    std::unique_ptr<SpeechRoundTrip> adapter;
    if (tasks.tst) {
        if (!config.get("augment.tst_command").empty())
            adapter = std::make_unique<CommandRoundTrip>(config.get("augment.tst_command"));
        else if (!config.path("paths.confusion").empty())
            adapter = std::make_unique<ConfusionTableRoundTrip>(ConfusionTableRoundTrip::from_file(config.path("paths.confusion")));
    }
    const Corpus out = augment_corpus(corpus, index, config.augment_config(), adapter.get(), tasks);
    fs::create_directories(dir);
    save_corpus(out, dir / "augmented_logs.json", dir / "augmented_labels.json");
    Inputs in;
    in.add("logs", config.path("paths.logs"));
    in.add("labels", config.path("paths.labels"));
    in.add("knowledge", config.path("paths.knowledge"));
    in.add("lexicon", lex_path);
    in.add("confusion", config.path("paths.confusion"));
    return finish(Stage::Augment, config, in, {"augmented_logs.json", "augmented_labels.json"});
}

StageResult stage_train_detect(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto data = load_training(config);
    std::vector<std::string> outs;
    for (std::size_t m = 0; m < members(config); ++m) {
        auto c = config.detect_config();
        c.seed = member_seed(c.seed, m);
        const auto model = train_detector(data.train, c, static_cast<std::size_t>(config.integer("detect.max_tokens")));
        outs.push_back(artifact("detector", m, ".ckpt"));
        model.save(dir / outs.back());
    }
    Inputs in;
    add_upstream(in, Stage::TrainDetect, dir);
    return finish(Stage::TrainDetect, config, in, outs);
}

StageResult stage_train_select(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto data = load_training(config);
    const auto track = config.track_config();
    const auto max_tokens = static_cast<std::size_t>(config.integer("rank.max_history_tokens"));
    std::vector<std::string> outs;
    for (std::size_t m = 0; m < members(config); ++m) {
        std::shared_ptr<const PairClassifier> tracker;
        if (track.method == TrackMethod::Learned) {
            auto tc = config.track_train_config();
            tc.seed = member_seed(tc.seed, m);
            Rng rng(text::mix_seed(tc.seed, "tracking-examples"));
            const auto examples = build_tracking_examples(data.train, data.kb,
                                                          static_cast<std::size_t>(config.integer("track.negatives")),
                                                          max_tokens, rng, config.number("track.mentioned_fraction"));
            auto model = std::make_shared<PairClassifier>(train_pair_classifier(examples, tc));
            outs.push_back(artifact("tracker", m, ".ckpt"));
            model->save(dir / outs.back());
            tracker = model;
        }
        const auto candidates = candidate_fn(track, tracker, data.kb, max_tokens);
        auto rc = config.rank_config();
        rc.seed = member_seed(rc.seed, m);
        const auto pointwise = train_pointwise(data.train, data.kb, rc);
        outs.push_back(artifact("pointwise", m, ".ckpt"));
        pointwise.save(dir / outs.back(), "pointwise");

        const auto listwise_data = build_listwise_training_data(data.train, data.kb,
                                                                static_cast<std::size_t>(config.integer("rank.kfold")), rc,
                                                                candidates, rc.seed);
        auto lc = config.listwise_config();
        lc.seed = member_seed(lc.seed, m);
        if (listwise_data.instances.empty()) throw PipelineError("train-select: no list-wise instances survived k-fold decoding");
        const auto listwise = train_listwise(pointwise, data.train, data.kb, listwise_data.instances, lc);
        outs.push_back(artifact("listwise", m, ".ckpt"));
        listwise.save(dir / outs.back(), "listwise");
        std::cerr << "train-select: system " << m << " list-wise instances " << listwise_data.instances.size()
                  << ", dropped " << listwise_data.dropped << "\n";
    }
    Inputs in;
    add_upstream(in, Stage::TrainSelect, dir);
    return finish(Stage::TrainSelect, config, in, outs);
}

StageResult stage_train_generate(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto data = load_training(config);
    std::vector<std::string> responses;
    for (const auto& d : data.train)
        if (d.label && d.label->response) responses.push_back(*d.label->response);
    const auto interrogatives = mine_frequent_interrogatives(
        responses, static_cast<std::size_t>(config.integer("generate.interrogative_min_count")));
    write_json(dir / "interrogatives.json", interrogatives);
    const Corpus corpus = preprocess_responses(data.train, interrogatives);
    const auto track = config.track_config();
    const auto max_tokens = static_cast<std::size_t>(config.integer("rank.max_history_tokens"));
    std::vector<std::string> outs = {"interrogatives.json"};
    for (std::size_t m = 0; m < members(config); ++m) {
        const auto candidates = candidate_fn(track, load_tracker(config, m), data.kb, max_tokens);
        auto gc = config.generate_config();
        gc.seed = member_seed(gc.seed, m);
        auto rc = config.rank_config();
        rc.seed = member_seed(text::mix_seed(rc.seed, "generation-folds"), m);
        const auto decoded = kfold_pointwise_decode(corpus, data.kb, gc.k_folds, rc, candidates, gc.seed);
        std::map<std::string, RankedList> selection;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            if (decoded.ranked[i]) selection[corpus[i].id] = *decoded.ranked[i];
        Rng rng(text::mix_seed(gc.seed, "generation-examples"));
        const auto examples = build_gen_examples(corpus, data.kb, selection, gc, rng, candidates);
        const auto generator = train_generator(examples, gc);
        outs.push_back(artifact("generator", m, ".ckpt"));
        generator.save(dir / outs.back());
    }
    Inputs in;
    add_upstream(in, Stage::TrainGenerate, dir);
    return finish(Stage::TrainGenerate, config, in, outs);
}

struct MemberModels {
    PairClassifier detector;
    std::shared_ptr<const PairClassifier> tracker;
    KnowledgeScorer pointwise;
    KnowledgeScorer listwise;
    ToyGenerator generator;
};

DecodeComponents member_components(const PipelineConfig& config, const MemberModels& mm, const KnowledgeBase& kb,
                                   std::size_t m) {
    const auto detect_tokens = static_cast<std::size_t>(config.integer("detect.max_tokens"));
    const auto rank_tokens = static_cast<std::size_t>(config.integer("rank.max_history_tokens"));
    const auto track = config.track_config();
    const double alpha = config.number("rank.alpha");
    const auto gc = config.generate_config();
    const auto nbest = static_cast<std::size_t>(config.integer("generate.nbest"));
    DecodeComponents c;
    c.detect = [&mm, detect_tokens](const Dialogue& d) { return mm.detector.score(linearize_history(d, detect_tokens), ""); };
    c.track = [&mm, track, &kb, rank_tokens](const Dialogue& d) {
        return track_entities(track, mm.tracker.get(), d, kb, rank_tokens);
    };
    c.select = [&mm, &kb, alpha](const Dialogue& d, const std::vector<std::size_t>& candidates) {
        const auto point = pointwise_rank(mm.pointwise, d, kb, candidates, 1.0);
        std::vector<KnowledgeRef> top;
        for (const auto& item : point.items) top.push_back(item.ref);
        if (top.empty()) return point;
        return ensemble_rank({point, listwise_rank(mm.listwise, d, kb, top, alpha)});
    };
    c.generate = [&mm, &kb, gc, nbest, m](const Dialogue& d, const RankedList& ranked) {
        const auto ctx = make_gen_context(d, kb, ranked, gc);
        CandidatePool pool{d.id, {}};
        std::size_t rank = 1;
        for (const auto& h : decode_nbest(mm.generator, ctx.context, nbest))
            pool.candidates.push_back({h.text, member_id(m), rank++, h.logprob});
        return pool;
    };
    c.choose = [](const CandidatePool& pool) { return consensus_select(pool, default_weights()); };
    return c;
}

json turn_to_json(const TurnPrediction& p) {
    json j = {{"id", p.dialogue_id}, {"probability", p.detection_probability}, {"target", p.target}};
    if (p.ranked) j["ranked"] = ranked_to_json(*p.ranked);
    json cands = json::array();
    for (const auto& c : p.pool.candidates)
        cands.push_back({{"text", c.text}, {"system_id", c.system_id}, {"rank", c.rank}, {"logprob", c.logprob}});
    j["candidates"] = cands;
    return j;
}

StageResult stage_decode(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto eval_logs = config.path("paths.eval_logs");
    if (eval_logs.empty()) throw ConfigError("decode needs paths.eval_logs");
    const auto kb = load_knowledge_base(config.path("paths.knowledge"));
    // Only the logs are read here; references never enter the decoder.
    const Corpus corpus = load_corpus(eval_logs);
    json details = json::array();
    std::vector<std::vector<TurnPrediction>> all;
    std::vector<std::string> outs;
    for (std::size_t m = 0; m < members(config); ++m) {
        MemberModels mm{PairClassifier::load(dir / artifact("detector", m, ".ckpt")), load_tracker(config, m),
                        KnowledgeScorer::load(dir / artifact("pointwise", m, ".ckpt"), "pointwise"),
                        KnowledgeScorer::load(dir / artifact("listwise", m, ".ckpt"), "listwise"),
                        ToyGenerator::load(dir / artifact("generator", m, ".ckpt"))};
        auto preds = end_to_end_decode(corpus, kb, member_components(config, mm, kb, m));
        outs.push_back(artifact("predictions", m, ".json"));
        write_json(dir / outs.back(), predictions_to_labels(preds));
        all.push_back(std::move(preds));
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        json sys = json::array();
        for (const auto& preds : all) sys.push_back(turn_to_json(preds[i]));
        details.push_back({{"id", corpus[i].id}, {"systems", sys}});
    }
    write_json(dir / "predictions.json", predictions_to_labels(all.front()));
    write_json(dir / "decode_details.json", details);
    outs.push_back("predictions.json");
    outs.push_back("decode_details.json");
    Inputs in;
    in.add("eval_logs", eval_logs);
    add_upstream(in, Stage::Decode, dir);
    return finish(Stage::Decode, config, in, outs);
}

struct DetailTurn {
    std::string id;
    std::vector<double> probability;
    std::vector<bool> target;
    std::vector<std::optional<RankedList>> ranked;
    CandidatePool pool;  // all systems
};

std::vector<DetailTurn> load_details(const fs::path& p) {
    std::vector<DetailTurn> out;
    for (const auto& t : read_json(p)) {
        DetailTurn d;
        d.id = t.at("id").get<std::string>();
        d.pool.turn_id = d.id;
        for (const auto& s : t.at("systems")) {
            d.probability.push_back(s.at("probability").get<double>());
            d.target.push_back(s.at("target").get<bool>());
            d.ranked.push_back(s.contains("ranked") ? std::optional<RankedList>(ranked_from_json(s["ranked"])) : std::nullopt);
            for (const auto& c : s.at("candidates"))
                d.pool.candidates.push_back({c.at("text").get<std::string>(), c.at("system_id").get<std::string>(),
                                             c.at("rank").get<std::size_t>(), c.at("logprob").get<double>()});
        }
        out.push_back(std::move(d));
    }
    return out;
}

StageResult stage_tune_consensus(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto refs_path = config.path("paths.eval_labels");
    if (refs_path.empty()) throw ConfigError("tune-consensus needs paths.eval_labels");
    const Corpus refs = load_corpus(config.path("paths.eval_logs"), refs_path);
    const auto details = load_details(dir / "decode_details.json");
    if (details.size() != refs.size()) throw PipelineError("tune-consensus: decode output does not match the references");
    std::vector<CandidatePool> pools;
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i].label || !refs[i].label->is_knowledge_seeking || details[i].pool.candidates.empty()) continue;
        pools.push_back(details[i].pool);
        texts.push_back(refs[i].label->response.value_or(""));
    }
    if (pools.empty()) throw PipelineError("tune-consensus: no knowledge-seeking turn with candidates");
    const auto result = tune_weights(pools, texts, default_weights(), config.tune_config());
    json out = weights_to_json(result.weights);
    out["initial_bleu"] = result.initial_bleu;
    out["final_bleu"] = result.final_bleu;
    write_json(dir / "consensus_weights.json", out);
    Inputs in;
    in.add("eval_labels", refs_path);
    add_upstream(in, Stage::TuneConsensus, dir);
    return finish(Stage::TuneConsensus, config, in, {"consensus_weights.json"});
}

StageResult stage_ensemble(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto details = load_details(dir / "decode_details.json");
    ConsensusWeights weights = default_weights();
    Inputs in;
    add_upstream(in, Stage::Ensemble, dir);
    if (fs::exists(dir / "consensus_weights.json")) {
        weights = weights_from_json(read_json(dir / "consensus_weights.json"));
        in.add("consensus_weights", dir / "consensus_weights.json");
    }
    std::vector<SystemDetections> systems;
    const std::size_t n = details.empty() ? 0 : details.front().probability.size();
    for (std::size_t m = 0; m < n; ++m) {
        SystemDetections s{member_id(m), {}};
        for (const auto& t : details) s.predictions.push_back({t.id, t.probability[m], t.target[m]});
        systems.push_back(std::move(s));
    }
    std::vector<TurnPrediction> preds;
    if (!systems.empty()) {
        const auto detection = error_fixing_ensemble(systems, config.error_fix_config());
        for (std::size_t i = 0; i < details.size(); ++i) {
            const auto& t = details[i];
            TurnPrediction p;
            p.dialogue_id = t.id;
            p.detection_probability = detection[i].probability;
            p.target = detection[i].label;
            if (p.target) {
                std::vector<RankedList> lists;
                for (const auto& r : t.ranked)
                    if (r) lists.push_back(*r);
                if (!lists.empty()) p.ranked = ensemble_rank(lists);
                p.pool = t.pool;
                if (!p.pool.candidates.empty()) p.response = p.pool.candidates[consensus_select(p.pool, weights)].text;
            }
            preds.push_back(std::move(p));
        }
    }
    write_json(dir / "ensemble_predictions.json", predictions_to_labels(preds));
    return finish(Stage::Ensemble, config, in, {"ensemble_predictions.json"});
}

StageResult stage_evaluate(const PipelineConfig& config) {
    const auto dir = config.output_dir();
    const auto refs_path = config.path("paths.eval_labels");
    if (refs_path.empty()) throw ConfigError("evaluate needs paths.eval_labels");
    const Corpus refs = load_corpus(config.path("paths.eval_logs"), refs_path);
    json report = {{"single", evaluate_labels(read_json(dir / "predictions.json"), refs).to_json()}};
    Inputs in;
    in.add("eval_labels", refs_path);
    add_upstream(in, Stage::Evaluate, dir);
    if (fs::exists(dir / "ensemble_predictions.json")) {
        report["ensemble"] = evaluate_labels(read_json(dir / "ensemble_predictions.json"), refs).to_json();
        in.add("ensemble_predictions", dir / "ensemble_predictions.json");
    }
    write_json(dir / "metrics.json", report);
    return finish(Stage::Evaluate, config, in, {"metrics.json"});
}

}  // namespace

Stage parse_stage(const std::string& name) {
    for (const auto& [s, n] : stage_names())
        if (n == name) return s;
    throw ConfigError("unknown stage '" + name + "'");
}

std::string stage_name(Stage stage) {
    for (const auto& [s, n] : stage_names())
        if (s == stage) return n;
    return "?";
}

std::vector<Stage> stage_dependencies(Stage stage) {
    switch (stage) {
        case Stage::Augment: return {};
        case Stage::TrainDetect: return {Stage::Augment};
        case Stage::TrainSelect: return {Stage::Augment};
        case Stage::TrainGenerate: return {Stage::Augment, Stage::TrainSelect};
        case Stage::Decode: return {Stage::TrainDetect, Stage::TrainSelect, Stage::TrainGenerate};
        case Stage::Ensemble: return {Stage::Decode};
        case Stage::TuneConsensus: return {Stage::Decode};
        case Stage::Evaluate: return {Stage::Decode};
    }
    return {};
}

std::string file_hash(const fs::path& path) { return hex64(text::fnv1a(read_file(path))); }

fs::path manifest_path(const fs::path& output_dir, Stage stage) {
    return output_dir / (stage_name(stage) + ".manifest.json");
}

void check_dependencies(Stage stage, const fs::path& output_dir) {
    for (Stage dep : stage_dependencies(stage)) {
        const auto mp = manifest_path(output_dir, dep);
        const std::string hint = "; run '" + stage_name(dep) + "' first";
        if (!fs::exists(mp))
            throw DependencyError("stage '" + stage_name(stage) + "' needs the outputs of '" + stage_name(dep) + "'" + hint);
        json manifest;
        try {
            manifest = json::parse(read_file(mp));
        } catch (const json::exception&) {
            throw DependencyError("manifest " + mp.string() + " is unreadable" + hint);
        }
        for (const auto& [name, hash] : manifest.at("outputs").items()) {
            const auto p = output_dir / name;
            if (!fs::exists(p)) throw DependencyError("artifact " + p.string() + " is missing" + hint);
            if (file_hash(p) != hash.get<std::string>())
                throw DependencyError("artifact " + p.string() + " changed since '" + stage_name(dep) + "' wrote it" + hint);
        }
    }
}

StageResult run_stage(Stage stage, const PipelineConfig& config) {
    config.validate();
    check_dependencies(stage, config.output_dir());
    switch (stage) {
        case Stage::Augment: return stage_augment(config);
        case Stage::TrainDetect: return stage_train_detect(config);
        case Stage::TrainSelect: return stage_train_select(config);
        case Stage::TrainGenerate: return stage_train_generate(config);
        case Stage::Decode: return stage_decode(config);
        case Stage::Ensemble: return stage_ensemble(config);
        case Stage::TuneConsensus: return stage_tune_consensus(config);
        case Stage::Evaluate: return stage_evaluate(config);
    }
    throw ConfigError("unknown stage");
}

}  // namespace kgd
