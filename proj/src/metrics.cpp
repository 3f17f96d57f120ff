#include "kgd/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "kgd/text.hpp"

namespace kgd::metrics {

namespace {

using Counts = std::unordered_map<std::string, double>;

Counts ngram_counts(const Tokens& t, int n) {
    Counts c;
    if (static_cast<int>(t.size()) < n) return c;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        std::string key = t[i];
        for (int j = 1; j < n; ++j) {
            key += '\x1f';
            key += t[i + j];
        }
        c[key] += 1;
    }
    return c;
}

double f_measure(double p, double r, double beta = 1.0) {
    if (p <= 0 || r <= 0) return 0.0;
    const double b2 = beta * beta;
    return (1 + b2) * p * r / (b2 * p + r);
}

}  // namespace

Tokens metric_tokens(const std::string& s) {
    Tokens out;
    for (auto& t : text::tokenize(s))
        if (!text::is_tag(t)) out.push_back(std::move(t));
    return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
    for (int i = 0; i < 4; ++i) {
        matches[i] += o.matches[i];
        totals[i] += o.totals[i];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
}

BleuStats& BleuStats::operator-=(const BleuStats& o) {
    for (int i = 0; i < 4; ++i) {
        matches[i] -= o.matches[i];
        totals[i] -= o.totals[i];
    }
    hyp_len -= o.hyp_len;
    ref_len -= o.ref_len;
    return *this;
}

BleuStats bleu_stats(const Tokens& hyp, const std::vector<Tokens>& refs) {
    if (refs.empty()) throw std::invalid_argument("bleu: empty reference set");
    BleuStats s;
    s.hyp_len = static_cast<double>(hyp.size());
    // Closest reference length, shorter on ties.
    double best = -1;
    for (const auto& r : refs) {
        const double len = static_cast<double>(r.size());
        const double diff = std::abs(len - s.hyp_len);
        if (best < 0 || diff < std::abs(best - s.hyp_len) || (diff == std::abs(best - s.hyp_len) && len < best)) best = len;
    }
    s.ref_len = best;
    for (int n = 1; n <= 4; ++n) {
        const Counts h = ngram_counts(hyp, n);
        Counts max_ref;
        for (const auto& r : refs)
            for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
        double m = 0, t = 0;
        for (const auto& [g, c] : h) {
            t += c;
            auto it = max_ref.find(g);
            if (it != max_ref.end()) m += std::min(c, it->second);
        }
        s.matches[n - 1] = m;
        s.totals[n - 1] = t;
    }
    return s;
}

double bleu_from_stats(const BleuStats& s, int n, bool smooth) {
    if (n < 1 || n > 4) throw std::invalid_argument("bleu: order must be in 1..4");
    if (s.hyp_len <= 0) return 0.0;
    double log_sum = 0;
    int orders = 0;
    for (int i = 0; i < n; ++i) {
        if (s.totals[i] <= 0) continue;
        double m = s.matches[i], t = s.totals[i];
        if (smooth && i > 0) {
            m += 1;
            t += 1;
        }
        if (m <= 0) return 0.0;
        log_sum += std::log(m / t);
        ++orders;
    }
    if (orders == 0) return 0.0;
    const double bp = s.hyp_len >= s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.hyp_len);
    return bp * std::exp(log_sum / orders);
}

double bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int n, bool smooth) {
    return bleu_from_stats(bleu_stats(hyp, refs), n, smooth);
}

double bleu(const std::string& hyp, const std::vector<std::string>& refs, int n, bool smooth) {
    std::vector<Tokens> r;
    for (const auto& s : refs) r.push_back(metric_tokens(s));
    return bleu(metric_tokens(hyp), r, n, smooth);
}

double corpus_bleu(const std::vector<HypRefs>& pairs, int n) {
    if (pairs.empty()) throw std::invalid_argument("corpus_bleu: no pairs");
    BleuStats total;
    for (const auto& p : pairs) {
        std::vector<Tokens> refs;
        for (const auto& r : p.references) refs.push_back(metric_tokens(r));
        total += bleu_stats(metric_tokens(p.hypothesis), refs);
    }
    return bleu_from_stats(total, n);
}

double rouge_n(const Tokens& hyp, const Tokens& ref, int n) {
    const Counts h = ngram_counts(hyp, n);
    const Counts r = ngram_counts(ref, n);
    double overlap = 0, ht = 0, rt = 0;
    for (const auto& [g, c] : h) {
        ht += c;
        auto it = r.find(g);
        if (it != r.end()) overlap += std::min(c, it->second);
    }
    for (const auto& [g, c] : r) rt += c;
    if (ht == 0 || rt == 0) return 0.0;
    return f_measure(overlap / ht, overlap / rt);
}

double rouge_n(const std::string& hyp, const std::string& ref, int n) {
    return rouge_n(metric_tokens(hyp), metric_tokens(ref), n);
}

double rouge_l(const Tokens& hyp, const Tokens& ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    std::vector<std::vector<int>> dp(hyp.size() + 1, std::vector<int>(ref.size() + 1, 0));
    for (std::size_t i = 1; i <= hyp.size(); ++i)
        for (std::size_t j = 1; j <= ref.size(); ++j)
            dp[i][j] = hyp[i - 1] == ref[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    const double lcs = dp[hyp.size()][ref.size()];
    return f_measure(lcs / static_cast<double>(hyp.size()), lcs / static_cast<double>(ref.size()));
}

double rouge_l(const std::string& hyp, const std::string& ref) { return rouge_l(metric_tokens(hyp), metric_tokens(ref)); }

std::string suffix_stem(const std::string& word) {
    static const char* suffixes[] = {"ingly", "edly", "ing", "ed", "es", "ly", "s"};
    for (const char* suffix : suffixes) {
        const std::string s(suffix);
        if (word.size() >= s.size() + 3 && word.compare(word.size() - s.size(), s.size(), s) == 0)
            return word.substr(0, word.size() - s.size());
    }
    return word;
}

double meteor_lite(const Tokens& hyp, const Tokens& ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    std::vector<int> hyp_to_ref(hyp.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);
    auto align = [&](auto&& same) {
        for (std::size_t i = 0; i < hyp.size(); ++i) {
            if (hyp_to_ref[i] >= 0) continue;
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (!ref_used[j] && same(hyp[i], ref[j])) {
                    hyp_to_ref[i] = static_cast<int>(j);
                    ref_used[j] = true;
                    break;
                }
            }
        }
    };
    align([](const std::string& a, const std::string& b) { return a == b; });
    align([](const std::string& a, const std::string& b) { return suffix_stem(a) == suffix_stem(b); });

    double matches = 0, chunks = 0;
    int prev = -2;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
        if (hyp_to_ref[i] < 0) {
            prev = -2;
            continue;
        }
        ++matches;
        if (hyp_to_ref[i] != prev + 1) ++chunks;
        prev = hyp_to_ref[i];
    }
    if (matches == 0) return 0.0;
    const double p = matches / static_cast<double>(hyp.size());
    const double r = matches / static_cast<double>(ref.size());
    const double fmean = 10 * p * r / (r + 9 * p);
    const double penalty = 0.5 * std::pow(chunks / matches, 3.0);
    return fmean * (1 - penalty);
}

double meteor_lite(const std::string& hyp, const std::string& ref) {
    return meteor_lite(metric_tokens(hyp), metric_tokens(ref));
}

double chrf(const std::string& hyp, const std::string& ref, int max_order, double beta) {
    std::string h, r;
    for (char c : text::lowercase(hyp))
        if (!std::isspace(static_cast<unsigned char>(c))) h.push_back(c);
    for (char c : text::lowercase(ref))
        if (!std::isspace(static_cast<unsigned char>(c))) r.push_back(c);
    double p_sum = 0, r_sum = 0;
    int orders = 0;
    for (int n = 1; n <= max_order; ++n) {
        if (static_cast<int>(h.size()) < n || static_cast<int>(r.size()) < n) continue;
        Counts hc, rc;
        for (std::size_t i = 0; i + n <= h.size(); ++i) hc[h.substr(i, n)] += 1;
        for (std::size_t i = 0; i + n <= r.size(); ++i) rc[r.substr(i, n)] += 1;
        double m = 0;
        for (const auto& [g, c] : hc) {
            auto it = rc.find(g);
            if (it != rc.end()) m += std::min(c, it->second);
        }
        p_sum += m / static_cast<double>(h.size() - n + 1);
        r_sum += m / static_cast<double>(r.size() - n + 1);
        ++orders;
    }
    if (orders == 0) return 0.0;
    return f_measure(p_sum / orders, r_sum / orders, beta);
}

PRF precision_recall_f1(const std::vector<bool>& predicted, const std::vector<bool>& reference) {
    if (predicted.size() != reference.size()) throw std::invalid_argument("precision_recall_f1: size mismatch");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] && reference[i]) ++tp;
        else if (predicted[i]) ++fp;
        else if (reference[i]) ++fn;
    }
    PRF out;
    out.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    out.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    out.f1 = out.precision + out.recall > 0 ? 2 * out.precision * out.recall / (out.precision + out.recall) : 0.0;
    return out;
}

namespace {

// 1-based rank of the first correct item within the top k, 0 if none.
std::size_t first_hit(const std::vector<std::string>& ranked, const std::vector<std::string>& correct, std::size_t k) {
    const std::set<std::string> gold(correct.begin(), correct.end());
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i)
        if (gold.count(ranked[i])) return i + 1;
    return 0;
}

void check_aligned(std::size_t a, std::size_t b) {
    if (a != b) throw std::invalid_argument("ranking metrics: predictions and references are not aligned");
}

}  // namespace

double mrr_at_k(const std::vector<std::vector<std::string>>& predicted,
                const std::vector<std::vector<std::string>>& correct, std::size_t k) {
    check_aligned(predicted.size(), correct.size());
    if (predicted.empty()) return 0.0;
    double sum = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (auto r = first_hit(predicted[i], correct[i], k)) sum += 1.0 / static_cast<double>(r);
    return sum / static_cast<double>(predicted.size());
}

double recall_at_k(const std::vector<std::vector<std::string>>& predicted,
                   const std::vector<std::vector<std::string>>& correct, std::size_t k) {
    check_aligned(predicted.size(), correct.size());
    if (predicted.empty()) return 0.0;
    double hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (first_hit(predicted[i], correct[i], k)) ++hits;
    return hits / static_cast<double>(predicted.size());
}

RankingScores ranking_scores(const std::vector<std::vector<std::string>>& predicted,
                             const std::vector<std::vector<std::string>>& correct) {
    return {mrr_at_k(predicted, correct, 5), recall_at_k(predicted, correct, 1), recall_at_k(predicted, correct, 5)};
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["scores"] = scores;
    j["counts"] = counts;
    return j.dump(2);
}

std::string MetricReport::to_text() const {
    std::ostringstream out;
    std::size_t width = 0;
    for (const auto& [k, v] : scores) width = std::max(width, k.size());
    for (const auto& [k, v] : counts) width = std::max(width, k.size());
    out << std::fixed << std::setprecision(4);
    for (const auto& [k, v] : scores) out << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
    out << std::setprecision(0);
    for (const auto& [k, v] : counts) out << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
    return out.str();
}

MetricReport generation_report(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
    if (hypotheses.size() != references.size()) throw std::invalid_argument("generation_report: size mismatch");
    MetricReport report;
    report.counts["responses"] = static_cast<double>(hypotheses.size());
    if (hypotheses.empty()) return report;
    std::vector<HypRefs> pairs;
    double meteor = 0, r1 = 0, r2 = 0, rl = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        pairs.push_back({hypotheses[i], {references[i]}});
        const auto h = metric_tokens(hypotheses[i]);
        const auto r = metric_tokens(references[i]);
        meteor += meteor_lite(h, r);
        r1 += rouge_n(h, r, 1);
        r2 += rouge_n(h, r, 2);
        rl += rouge_l(h, r);
    }
    const double n = static_cast<double>(hypotheses.size());
    for (int k = 1; k <= 4; ++k) report.scores["bleu-" + std::to_string(k)] = corpus_bleu(pairs, k);
    report.scores["meteor-lite"] = meteor / n;
    report.scores["rouge-1"] = r1 / n;
    report.scores["rouge-2"] = r2 / n;
    report.scores["rouge-l"] = rl / n;
    return report;
}

}  // namespace kgd::metrics
