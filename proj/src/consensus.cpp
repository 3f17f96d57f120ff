#include "kgd/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "kgd/random.hpp"

namespace kgd {

using nlohmann::json;

void CandidatePool::validate() const {
    std::map<std::string, std::set<std::size_t>> ranks;
    for (const auto& c : candidates) {
        if (c.rank < 1) throw std::invalid_argument("pool " + turn_id + ": ranks start at 1");
        if (!ranks[c.system_id].insert(c.rank).second)
            throw std::invalid_argument("pool " + turn_id + ": duplicate rank for system " + c.system_id);
    }
    for (const auto& [sys, rs] : ranks)
        if (*rs.rbegin() != rs.size())
            throw std::invalid_argument("pool " + turn_id + ": ranks of system " + sys + " are not contiguous");
}

const std::array<std::string, kConsensusFeatures>& consensus_feature_names() {
    static const std::array<std::string, kConsensusFeatures> names = {
        "bleu1", "bleu2", "bleu3", "bleu4", "rouge1", "rouge2", "rougeL", "meteor", "chrf", "reciprocal_rank"};
    return names;
}

namespace {

std::array<double, 9> similarities(const metrics::Tokens& hyp, const std::string& hyp_text, const metrics::Tokens& ref,
                                   const std::string& ref_text) {
    std::array<double, 9> s{};
    for (int n = 1; n <= 4; ++n) s[static_cast<std::size_t>(n - 1)] = metrics::bleu(hyp, {ref}, n, true);
    s[4] = metrics::rouge_n(hyp, ref, 1);
    s[5] = metrics::rouge_n(hyp, ref, 2);
    s[6] = metrics::rouge_l(hyp, ref);
    s[7] = metrics::meteor_lite(hyp, ref);
    s[8] = metrics::chrf(hyp_text, ref_text);
    return s;
}

}  // namespace

FeatureVector extract_features(const CandidatePool& pool, std::size_t index) {
    if (index >= pool.candidates.size()) throw std::out_of_range("extract_features: candidate index");
    FeatureVector f{};
    const auto& c = pool.candidates[index];
    const auto hyp = metrics::metric_tokens(c.text);
    const std::size_t peers = pool.candidates.size() - 1;
    for (std::size_t j = 0; j < pool.candidates.size(); ++j) {
        if (j == index) continue;
        const auto& o = pool.candidates[j];
        const auto s = similarities(hyp, c.text, metrics::metric_tokens(o.text), o.text);
        for (std::size_t m = 0; m < s.size(); ++m) f[m] += s[m];
    }
    if (peers > 0)
        for (std::size_t m = 0; m < 9; ++m) f[m] /= static_cast<double>(peers);
    f[9] = 1.0 / static_cast<double>(c.rank);
    return f;
}

std::vector<FeatureVector> pool_features(const CandidatePool& pool) {
    std::vector<FeatureVector> out;
    for (std::size_t i = 0; i < pool.candidates.size(); ++i) out.push_back(extract_features(pool, i));
    return out;
}

double weighted_score(const ConsensusWeights& w, const FeatureVector& f) {
    double s = 0;
    for (std::size_t i = 0; i < kConsensusFeatures; ++i) s += w[i] * f[i];
    return s;
}

bool tie_break_prefers(const PoolCandidate& a, const PoolCandidate& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    if (a.system_id != b.system_id) return a.system_id < b.system_id;
    return a.rank < b.rank;
}

std::size_t consensus_select(const CandidatePool& pool, const std::vector<FeatureVector>& features,
                             const ConsensusWeights& weights) {
    if (pool.candidates.empty()) throw std::invalid_argument("consensus_select: empty pool " + pool.turn_id);
    std::size_t best = 0;
    double best_score = weighted_score(weights, features[0]);
    for (std::size_t i = 1; i < pool.candidates.size(); ++i) {
        const double s = weighted_score(weights, features[i]);
        if (s > best_score || (s == best_score && tie_break_prefers(pool.candidates[i], pool.candidates[best]))) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

std::size_t consensus_select(const CandidatePool& pool, const ConsensusWeights& weights) {
    return consensus_select(pool, pool_features(pool), weights);
}

double consensus_bleu(const std::vector<CandidatePool>& pools, const std::vector<std::vector<FeatureVector>>& features,
                      const std::vector<std::string>& references, const ConsensusWeights& weights) {
    metrics::BleuStats total;
    for (std::size_t p = 0; p < pools.size(); ++p) {
        const auto& c = pools[p].candidates[consensus_select(pools[p], features[p], weights)];
        total += metrics::bleu_stats(metrics::metric_tokens(c.text), {metrics::metric_tokens(references[p])});
    }
    return metrics::bleu_from_stats(total, 4);
}

namespace {

struct Line {
    double intercept;
    double slope;
    std::size_t cand;
};

struct Segment {
    double start;  // -inf for the first
    std::size_t cand;
};

// Upper envelope of score(gamma) = intercept + gamma * slope.
std::vector<Segment> upper_envelope(std::vector<Line> lines, const CandidatePool& pool) {
    std::sort(lines.begin(), lines.end(), [&](const Line& a, const Line& b) {
        if (a.slope != b.slope) return a.slope < b.slope;
        if (a.intercept != b.intercept) return a.intercept > b.intercept;
        return tie_break_prefers(pool.candidates[a.cand], pool.candidates[b.cand]);
    });
    std::vector<Line> uniq;
    for (const auto& l : lines)
        if (uniq.empty() || uniq.back().slope != l.slope) uniq.push_back(l);
    std::vector<Line> hull;
    std::vector<double> starts;
    const double ninf = -std::numeric_limits<double>::infinity();
    for (const auto& l : uniq) {
        double x = ninf;
        while (!hull.empty()) {
            const auto& t = hull.back();
            x = (t.intercept - l.intercept) / (l.slope - t.slope);
            if (x <= starts.back()) {
                hull.pop_back();
                starts.pop_back();
                x = ninf;
            } else {
                break;
            }
        }
        hull.push_back(l);
        starts.push_back(hull.size() == 1 ? ninf : x);
    }
    std::vector<Segment> out;
    for (std::size_t i = 0; i < hull.size(); ++i) out.push_back({starts[i], hull[i].cand});
    return out;
}

struct Problem {
    const std::vector<CandidatePool>& pools;
    const std::vector<std::vector<FeatureVector>>& features;
    const std::vector<std::string>& references;
    std::vector<std::vector<metrics::BleuStats>> stats;
};

// Best gamma along `dir` from `w`; returns (gamma, bleu) of the best interval.
std::pair<double, double> line_search(const Problem& pr, const ConsensusWeights& w, const ConsensusWeights& dir) {
    struct Event {
        double at;
        std::size_t pool;
        std::size_t cand;
    };
    std::vector<Event> events;
    std::vector<std::size_t> current(pr.pools.size());
    metrics::BleuStats total;
    for (std::size_t p = 0; p < pr.pools.size(); ++p) {
        std::vector<Line> lines;
        for (std::size_t c = 0; c < pr.features[p].size(); ++c)
            lines.push_back({weighted_score(w, pr.features[p][c]), weighted_score(dir, pr.features[p][c]), c});
        const auto env = upper_envelope(std::move(lines), pr.pools[p]);
        current[p] = env.front().cand;
        total += pr.stats[p][current[p]];
        for (std::size_t s = 1; s < env.size(); ++s) events.push_back({env[s].start, p, env[s].cand});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.at < b.at; });
    if (events.empty()) return {0.0, metrics::bleu_from_stats(total, 4)};

    double best_gamma = events.front().at - 1.0;
    double best = metrics::bleu_from_stats(total, 4);
    std::size_t i = 0;
    while (i < events.size()) {
        const double at = events[i].at;
        while (i < events.size() && events[i].at == at) {
            const auto& e = events[i];
            total -= pr.stats[e.pool][current[e.pool]];
            current[e.pool] = e.cand;
            total += pr.stats[e.pool][current[e.pool]];
            ++i;
        }
        const double gamma = i < events.size() ? 0.5 * (at + events[i].at) : at + 1.0;
        const double score = metrics::bleu_from_stats(total, 4);
        // Prefer the interval closest to the current point among equals.
        if (score > best || (score == best && std::abs(gamma) < std::abs(best_gamma))) {
            best = score;
            best_gamma = gamma;
        }
    }
    return {best_gamma, best};
}

}  // namespace

TuneResult tune_weights(const std::vector<CandidatePool>& pools, const std::vector<std::string>& references,
                        const ConsensusWeights& init, const TuneConfig& config) {
    if (pools.empty() || references.empty()) throw std::invalid_argument("tune_weights: no dev pools or references");
    if (pools.size() != references.size()) throw std::invalid_argument("tune_weights: pools and references differ in size");
    std::vector<std::vector<FeatureVector>> features;
    Problem pr{pools, features, references, {}};
    for (const auto& p : pools) {
        if (p.candidates.empty()) throw std::invalid_argument("tune_weights: empty pool " + p.turn_id);
        features.push_back(pool_features(p));
    }
    for (std::size_t p = 0; p < pools.size(); ++p) {
        const auto ref = metrics::metric_tokens(references[p]);
        auto& row = pr.stats.emplace_back();
        for (const auto& c : pools[p].candidates) row.push_back(metrics::bleu_stats(metrics::metric_tokens(c.text), {ref}));
    }

    Rng rng(config.seed);
    TuneResult result;
    result.initial_bleu = consensus_bleu(pools, features, references, init);
    result.weights = init;
    result.final_bleu = result.initial_bleu;

    for (int r = 0; r < std::max(1, config.restarts); ++r) {
        ConsensusWeights w = init;
        if (r > 0)
            for (auto& x : w) x = rng.uniform(-1.0, 1.0);
        double cur = consensus_bleu(pools, features, references, w);
        std::size_t moves = 0;
        for (int round = 0; round < config.max_rounds; ++round) {
            bool improved = false;
            std::vector<ConsensusWeights> dirs;
            for (std::size_t k = 0; k < kConsensusFeatures; ++k) {
                ConsensusWeights d{};
                d[k] = 1.0;
                dirs.push_back(d);
            }
            for (int k = 0; k < config.directions_per_round; ++k) {
                ConsensusWeights d{};
                for (auto& x : d) x = rng.normal();
                dirs.push_back(d);
            }
            for (const auto& d : dirs) {
                const auto [gamma, predicted] = line_search(pr, w, d);
                if (!(predicted > cur)) continue;
                ConsensusWeights cand = w;
                for (std::size_t k = 0; k < kConsensusFeatures; ++k) cand[k] += gamma * d[k];
                const double actual = consensus_bleu(pools, features, references, cand);
                if (actual > cur) {
                    w = cand;
                    cur = actual;
                    improved = true;
                    ++moves;
                }
            }
            if (!improved) break;
        }
        if (cur > result.final_bleu) {
            result.final_bleu = cur;
            result.weights = w;
            result.accepted_moves = moves;
        }
    }
    return result;
}

json weights_to_json(const ConsensusWeights& w) {
    return {{"features", consensus_feature_names()}, {"weights", w}};
}

ConsensusWeights weights_from_json(const json& j) {
    const auto names = j.at("features").get<std::vector<std::string>>();
    const auto values = j.at("weights").get<std::vector<double>>();
    if (names.size() != kConsensusFeatures || values.size() != kConsensusFeatures)
        throw std::invalid_argument("consensus weights: expected 10 named features");
    ConsensusWeights w{};
    for (std::size_t i = 0; i < kConsensusFeatures; ++i) {
        if (names[i] != consensus_feature_names()[i])
            throw std::invalid_argument("consensus weights: unexpected feature '" + names[i] + "'");
        if (!std::isfinite(values[i])) throw std::invalid_argument("consensus weights must be finite");
        w[i] = values[i];
    }
    return w;
}

ConsensusWeights default_weights() {
    ConsensusWeights w;
    w.fill(1.0);
    return w;
}

std::string pools_to_jsonl(const std::vector<CandidatePool>& pools) {
    std::string out;
    for (const auto& p : pools)
        for (const auto& c : p.candidates)
            out += json{{"turn_id", p.turn_id}, {"system_id", c.system_id}, {"rank", c.rank}, {"logprob", c.logprob},
                        {"text", c.text}}.dump() + "\n";
    return out;
}

std::vector<CandidatePool> pools_from_jsonl(const std::string& content) {
    std::vector<CandidatePool> pools;
    std::map<std::string, std::size_t> where;
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::invalid_argument("pool line " + std::to_string(lineno) + ": " + e.what());
        }
        const auto turn = j.at("turn_id").get<std::string>();
        auto it = where.find(turn);
        if (it == where.end()) {
            it = where.emplace(turn, pools.size()).first;
            pools.push_back({turn, {}});
        }
        pools[it->second].candidates.push_back({j.at("text").get<std::string>(), j.at("system_id").get<std::string>(),
                                                j.at("rank").get<std::size_t>(), j.at("logprob").get<double>()});
    }
    for (const auto& p : pools) p.validate();
    return pools;
}

}  // namespace kgd
