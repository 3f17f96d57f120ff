#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "kgd/pipeline.hpp"
#include "kgd/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDependencyError = 3;
constexpr int kRuntimeError = 1;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-grounded spoken dialogue toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string overrides;

    std::vector<std::pair<CLI::App*, kgd::Stage>> stages;
    for (kgd::Stage s : {kgd::Stage::Augment, kgd::Stage::TrainDetect, kgd::Stage::TrainSelect, kgd::Stage::TrainGenerate,
                         kgd::Stage::Decode, kgd::Stage::Ensemble, kgd::Stage::TuneConsensus, kgd::Stage::Evaluate}) {
        auto* sub = app.add_subcommand(kgd::stage_name(s), "run the " + kgd::stage_name(s) + " stage");
        sub->add_option("--config", config_path, "configuration file")->required();
        sub->add_option("--seed", seed, "overrides the configured seed");
        sub->add_option("--stage-overrides", overrides, "comma separated key=value pairs");
        stages.emplace_back(sub, s);
    }

    fs::path synth_dir;
    std::uint64_t synth_seed = 0;
    std::size_t synth_dialogues = 200;
    auto* synth = app.add_subcommand("synth", "write a synthetic mini corpus and a matching config");
    synth->add_option("dir", synth_dir, "output directory")->required();
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--dialogues", synth_dialogues, "number of dialogues");

    auto* keys = app.add_subcommand("config-keys", "list configuration keys with defaults");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*synth) {
            kgd::synthetic::write_workspace(synth_dir, synth_seed, synth_dialogues);
            std::cout << "wrote " << (synth_dir / "config.txt").string() << "\n";
            return kOk;
        }
        if (*keys) {
            for (const auto& k : kgd::PipelineConfig::keys())
                std::cout << k.name << " = " << k.default_value << "\t# " << k.doc << "\n";
            return kOk;
        }
        for (const auto& [sub, stage] : stages) {
            if (!*sub) continue;
            auto config = kgd::PipelineConfig::load(config_path);
            if (seed) config.set("seed", std::to_string(*seed));
            config.apply_overrides(overrides);
            const auto result = kgd::run_stage(stage, config);
            for (const auto& p : result.outputs) std::cout << p.string() << "\n";
            std::cout << result.manifest.string() << "\n";
        }
        return kOk;
    } catch (const kgd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const kgd::DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return kDependencyError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}
