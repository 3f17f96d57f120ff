#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgd/autodiff.hpp"
#include "kgd/random.hpp"

namespace kgd {

inline constexpr int kCheckpointVersion = 1;

// Named parameter tensors with stable addresses (tapes hold references).
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    ad::Parameter& add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng,
                              bool decay = true);
    ad::Parameter& add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool decay = false);

    ad::Parameter& get(const std::string& name);
    const ad::Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<ad::Parameter*> all();
    std::vector<const ad::Parameter*> all() const;
    std::size_t scalar_count() const;
    void zero_grad();

    // Copies values of every parameter whose name starts with prefix and exists in both stores.
    void copy_values_from(const ParamStore& other, const std::string& prefix = "");
    bool equals(const ParamStore& other) const;
    bool all_finite() const;

    nlohmann::json to_json() const;
    static ParamStore from_json(const nlohmann::json& j);

private:
    std::vector<std::unique_ptr<ad::Parameter>> params_;
};

struct AdamWConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

// Adam with decoupled weight decay.
class AdamW {
public:
    explicit AdamW(AdamWConfig config) : config_(config) {}
    // Applies grad * grad_scale; gradients are cleared afterwards.
    void step(ParamStore& params, double grad_scale = 1.0);
    std::int64_t steps() const { return t_; }

private:
    AdamWConfig config_;
    std::int64_t t_ = 0;
};

// Self-describing checkpoint archive: {version, kind, config, extra, params}.
struct Checkpoint {
    std::string kind;
    nlohmann::json config;
    nlohmann::json extra;
    ParamStore params;
};
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

// Compares analytic gradients with central differences on sampled entries.
// Returns the max of |a - n| / max(|a|, |n|, floor) over the sampled entries.
struct GradCheckResult {
    double max_relative_error = 0;
    std::size_t entries_checked = 0;
    std::string worst_parameter;
};
GradCheckResult finite_difference_check(ParamStore& params, const std::function<ad::Var(ad::Tape&)>& loss_fn,
                                        double epsilon = 1e-5, std::size_t per_parameter = 4, std::uint64_t seed = 0,
                                        double floor = 1e-6);

}  // namespace kgd
