#include "kgd/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kgd/corpus.hpp"

namespace kgd {

using nlohmann::json;

ParamStore::ParamStore(const ParamStore& other) {
    for (const auto& p : other.params_) params_.push_back(std::make_unique<ad::Parameter>(*p));
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this != &other) {
        params_.clear();
        for (const auto& p : other.params_) params_.push_back(std::make_unique<ad::Parameter>(*p));
    }
    return *this;
}

ad::Parameter& ParamStore::add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev,
                                      Rng& rng, bool decay) {
    auto& p = add_zeros(name, rows, cols, decay);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) p.value(i, j) = stddev * rng.normal();
    return p;
}

ad::Parameter& ParamStore::add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool decay) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    auto p = std::make_unique<ad::Parameter>();
    p->name = name;
    p->value = ad::Matrix::Zero(rows, cols);
    p->grad = ad::Matrix::Zero(rows, cols);
    p->m = ad::Matrix::Zero(rows, cols);
    p->v = ad::Matrix::Zero(rows, cols);
    p->decay = decay;
    params_.push_back(std::move(p));
    return *params_.back();
}

ad::Parameter& ParamStore::get(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return *p;
    throw std::out_of_range("unknown parameter " + name);
}

const ad::Parameter& ParamStore::get(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return *p;
    throw std::out_of_range("unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::vector<ad::Parameter*> ParamStore::all() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const ad::Parameter*> ParamStore::all() const {
    std::vector<const ad::Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other, const std::string& prefix) {
    for (auto& p : params_) {
        if (p->name.rfind(prefix, 0) != 0 || !other.contains(p->name)) continue;
        const auto& src = other.get(p->name);
        if (src.value.rows() == p->value.rows() && src.value.cols() == p->value.cols()) p->value = src.value;
    }
}

bool ParamStore::equals(const ParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& a = *params_[i];
        const auto& b = *other.params_[i];
        if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() || a.value != b.value)
            return false;
    }
    return true;
}

bool ParamStore::all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](const auto& p) { return p->value.allFinite(); });
}

json ParamStore::to_json() const {
    json arr = json::array();
    for (const auto& p : params_) {
        std::vector<double> data(static_cast<std::size_t>(p->value.size()));
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data(), p->value.rows(), p->value.cols()) = p->value;
        arr.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"decay", p->decay},
                       {"data", data}});
    }
    return arr;
}

ParamStore ParamStore::from_json(const json& j) {
    ParamStore store;
    for (const auto& e : j) {
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        auto& p = store.add_zeros(e.at("name").get<std::string>(), rows, cols, e.value("decay", true));
        const auto data = e.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols)
            throw ParseError("checkpoint: parameter " + p.name + " has the wrong element count");
        p.value = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(),
                                                                                                           rows, cols);
    }
    return store;
}

void AdamW::step(ParamStore& params, double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (auto* p : params.all()) {
        if (p->grad.size() != p->value.size()) {
            p->zero_grad();
            continue;
        }
        const ad::Matrix g = p->grad * grad_scale;
        p->m = config_.beta1 * p->m + (1 - config_.beta1) * g;
        p->v = config_.beta2 * p->v + (1 - config_.beta2) * g.cwiseProduct(g);
        if (p->decay) p->value *= (1.0 - config_.learning_rate * config_.weight_decay);
        p->value.array() -= config_.learning_rate * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + config_.epsilon);
        p->grad.setZero();
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json j;
    j["version"] = kCheckpointVersion;
    j["kind"] = ckpt.kind;
    j["config"] = ckpt.config;
    j["extra"] = ckpt.extra;
    j["params"] = ckpt.params.to_json();
    write_file(path, j.dump());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!j.contains("version") || !j["version"].is_number_integer())
        throw ParseError(path.string() + ": checkpoint has no version field");
    if (j["version"].get<int>() != kCheckpointVersion)
        throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(j["version"].get<int>()));
    Checkpoint c;
    c.kind = j.value("kind", "");
    if (c.kind != expected_kind) throw ParseError(path.string() + ": expected a " + expected_kind + " checkpoint, found " + c.kind);
    c.config = j.value("config", json::object());
    c.extra = j.value("extra", json::object());
    c.params = ParamStore::from_json(j.at("params"));
    return c;
}

GradCheckResult finite_difference_check(ParamStore& params, const std::function<ad::Var(ad::Tape&)>& loss_fn,
                                        double epsilon, std::size_t per_parameter, std::uint64_t seed, double floor) {
    params.zero_grad();
    {
        ad::Tape tape;
        auto loss = loss_fn(tape);
        tape.backward(loss);
    }
    auto eval = [&] {
        ad::Tape tape;
        return loss_fn(tape).scalar();
    };
    Rng rng(seed);
    GradCheckResult result;
    for (auto* p : params.all()) {
        const ad::Matrix analytic = p->grad;
        // Prefer entries the loss actually touches; fall back to any entry.
        std::vector<Eigen::Index> live;
        for (Eigen::Index i = 0; i < analytic.size(); ++i)
            if (std::abs(analytic(i)) > floor) live.push_back(i);
        std::vector<Eigen::Index> picks;
        if (live.empty()) {
            for (auto i : rng.sample_without_replacement(static_cast<std::size_t>(analytic.size()), per_parameter))
                picks.push_back(static_cast<Eigen::Index>(i));
        } else {
            for (auto i : rng.sample_without_replacement(live.size(), per_parameter)) picks.push_back(live[i]);
        }
        for (auto idx : picks) {
            const double original = p->value(idx);
            p->value(idx) = original + epsilon;
            const double up = eval();
            p->value(idx) = original - epsilon;
            const double down = eval();
            p->value(idx) = original;
            const double numeric = (up - down) / (2 * epsilon);
            const double a = analytic(idx);
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++result.entries_checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_parameter = p->name;
            }
        }
    }
    params.zero_grad();
    return result;
}

}  // namespace kgd
