#include <doctest.h>

#include <filesystem>

#include "kgd/pipeline.hpp"
#include "kgd/synthetic.hpp"

using namespace kgd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("kgd_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

synthetic::MiniCorpus small_corpus(std::uint64_t seed) {
    synthetic::MiniCorpusConfig c;
    c.dialogues = 60;
    c.seed = seed;
    c.noise.seed = seed;
    return synthetic::make_mini_corpus(c);
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("config parsing, overrides and errors") {
        auto c = PipelineConfig::parse("# comment\nseed = 7\nrank.epochs = 3  # trailing\n\n", "/base");
        CHECK(c.seed() == 7);
        CHECK(c.integer("rank.epochs") == 3);
        CHECK(c.get("ensemble.members") == "1");
        c.apply_overrides("rank.epochs=5,generate.p_s=0.2");
        CHECK(c.integer("rank.epochs") == 5);
        CHECK(c.number("generate.p_s") == doctest::Approx(0.2));
        c.set("paths.knowledge", "kb.json");
        CHECK(c.path("paths.knowledge") == fs::path("/base/kb.json"));
        CHECK_THROWS_AS(c.set("rank.epoch", "1"), ConfigError);
        CHECK_THROWS_AS(PipelineConfig::parse("seed 7"), ConfigError);
        CHECK_THROWS_AS(PipelineConfig::parse("rank.epochs = 1").seed(), ConfigError);
        CHECK_THROWS_AS(PipelineConfig::parse("seed = 1").validate(), ConfigError);
        c.set("rank.epochs", "abc");
        CHECK_THROWS_AS(c.integer("rank.epochs"), ConfigError);
    }

    TEST_CASE("every key has a default and the canonical form is sorted") {
        const PipelineConfig c;
        for (const auto& k : PipelineConfig::keys()) {
            CHECK_FALSE(k.doc.empty());
            CHECK_NOTHROW(c.get(k.name));
        }
        const auto canon = c.canonical();
        CHECK(canon == PipelineConfig::parse(canon).canonical());
    }

    TEST_CASE("oracle components reproduce the references") {
        const auto mini = small_corpus(1);
        const auto preds = end_to_end_decode(mini.noisy_test, mini.kb, oracle_components(mini.noisy_test, mini.kb));
        const auto labels = predictions_to_labels(preds);
        CHECK(validate_labels(labels, mini.noisy_test.size(), &mini.kb).empty());
        const auto rep = evaluate_labels(labels, mini.noisy_test);
        CHECK(rep.detection.f1 == 1.0);
        CHECK(rep.selection.r1 == 1.0);
        CHECK(rep.generation.scores.at("bleu-4") == doctest::Approx(1.0));
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const auto& gold = *mini.noisy_test[i].label;
            CHECK(preds[i].target == gold.is_knowledge_seeking);
            if (!gold.is_knowledge_seeking) CHECK(labels[i] == nlohmann::json{{"target", false}});
            else CHECK(preds[i].response == gold.response);
        }
    }

    TEST_CASE("components only see unlabeled dialogues") {
        const auto mini = small_corpus(2);
        std::size_t calls = 0;
        DecodeComponents c;
        c.detect = [&](const Dialogue& d) {
            ++calls;
            CHECK_FALSE(d.label.has_value());
            return 1.0;
        };
        c.track = [&](const Dialogue& d) {
            CHECK_FALSE(d.label.has_value());
            return std::vector<EntityRef>{};
        };
        c.select = [&](const Dialogue& d, const std::vector<std::size_t>& cands) {
            CHECK_FALSE(d.label.has_value());
            CHECK(cands.empty());
            return RankedList{d.id, {{mini.kb[0].ref(), 1.0}}};
        };
        c.generate = [&](const Dialogue& d, const RankedList&) {
            CHECK_FALSE(d.label.has_value());
            return CandidatePool{d.id, {{"ok", "s", 1, 0.0}}};
        };
        const auto preds = end_to_end_decode(mini.noisy_test, mini.kb, c);
        CHECK(calls == mini.noisy_test.size());
        CHECK(validate_labels(predictions_to_labels(preds), preds.size(), &mini.kb).empty());
    }

    TEST_CASE("a failing component names the turn") {
        const auto mini = small_corpus(3);
        DecodeComponents c;
        c.detect = [](const Dialogue&) -> double { throw std::runtime_error("boom"); };
        try {
            end_to_end_decode(mini.noisy_test, mini.kb, c);
            FAIL("no error");
        } catch (const PipelineError& e) {
            CHECK(std::string(e.what()).find(mini.noisy_test[0].id) != std::string::npos);
        }
    }

    TEST_CASE("label validation catches schema problems") {
        nlohmann::json bad = nlohmann::json::array();
        bad.push_back({{"target", true}, {"knowledge", nlohmann::json::array()}});
        bad.push_back({{"target", "yes"}});
        CHECK(validate_labels(bad, 3).size() == 3);
        CHECK_FALSE(validate_labels(nlohmann::json::object(), 0).empty());
    }

    TEST_CASE("stages refuse to run before their dependencies") {
        const auto dir = fresh_dir("deps");
        CHECK_THROWS_AS(check_dependencies(Stage::Decode, dir), DependencyError);
        CHECK_NOTHROW(check_dependencies(Stage::Augment, dir));
        for (Stage s : {Stage::TrainDetect, Stage::Evaluate, Stage::TuneConsensus})
            CHECK_FALSE(stage_dependencies(s).empty());
        CHECK(parse_stage("train-select") == Stage::TrainSelect);
        CHECK_THROWS(parse_stage("train"));
    }

    TEST_CASE("augment is reproducible and manifests track artifacts") {
        const auto dir = fresh_dir("augment");
        synthetic::write_workspace(dir, 4, 40);
        auto config = PipelineConfig::load(dir / "config.txt");
        const auto first = run_stage(Stage::Augment, config);
        const auto manifest = read_file(first.manifest);
        const auto logs = read_file(dir / "out" / "augmented_logs.json");
        run_stage(Stage::Augment, config);
        CHECK(read_file(first.manifest) == manifest);
        CHECK(read_file(dir / "out" / "augmented_logs.json") == logs);
        CHECK_NOTHROW(check_dependencies(Stage::TrainDetect, dir / "out"));
        write_file(dir / "out" / "augmented_logs.json", "[]");
        CHECK_THROWS_AS(check_dependencies(Stage::TrainDetect, dir / "out"), DependencyError);
    }
}
