#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace kgd::metrics {

using Tokens = std::vector<std::string>;

// Tokens used by every text metric: lowercase, punctuation detached, tags removed.
Tokens metric_tokens(const std::string& s);

// Sufficient statistics for BLEU up to order 4.
struct BleuStats {
    std::array<double, 4> matches{};
    std::array<double, 4> totals{};
    double hyp_len = 0;
    double ref_len = 0;

    BleuStats& operator+=(const BleuStats& o);
    BleuStats& operator-=(const BleuStats& o);
};

BleuStats bleu_stats(const Tokens& hyp, const std::vector<Tokens>& refs);
// Geometric mean of clipped precisions over orders 1..n with a brevity penalty.
// Orders for which the hypothesis has no n-grams are left out of the mean.
double bleu_from_stats(const BleuStats& stats, int n, bool smooth = false);
double bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int n, bool smooth = false);
double bleu(const std::string& hyp, const std::vector<std::string>& refs, int n, bool smooth = false);

struct HypRefs {
    std::string hypothesis;
    std::vector<std::string> references;
};
double corpus_bleu(const std::vector<HypRefs>& pairs, int n = 4);

double rouge_n(const Tokens& hyp, const Tokens& ref, int n);
double rouge_n(const std::string& hyp, const std::string& ref, int n);
double rouge_l(const Tokens& hyp, const Tokens& ref);
double rouge_l(const std::string& hyp, const std::string& ref);

// Exact then suffix-stem unigram alignment, fragmentation penalty 0.5*(chunks/matches)^3.
double meteor_lite(const Tokens& hyp, const Tokens& ref);
double meteor_lite(const std::string& hyp, const std::string& ref);
std::string suffix_stem(const std::string& word);

// Character n-gram F-score over whitespace-stripped text.
double chrf(const std::string& hyp, const std::string& ref, int max_order = 6, double beta = 2.0);

struct PRF {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};
PRF precision_recall_f1(const std::vector<bool>& predicted, const std::vector<bool>& reference);

// Ranked predictions vs. the set of correct keys per case.
double mrr_at_k(const std::vector<std::vector<std::string>>& predicted,
                const std::vector<std::vector<std::string>>& correct, std::size_t k);
double recall_at_k(const std::vector<std::vector<std::string>>& predicted,
                   const std::vector<std::vector<std::string>>& correct, std::size_t k);

struct RankingScores {
    double mrr5 = 0;
    double r1 = 0;
    double r5 = 0;
};
RankingScores ranking_scores(const std::vector<std::vector<std::string>>& predicted,
                             const std::vector<std::vector<std::string>>& correct);

struct MetricReport {
    std::map<std::string, double> scores;
    std::map<std::string, double> counts;

    std::string to_json() const;
    std::string to_text() const;
};

// BLEU-1..4 (corpus), METEOR-lite, ROUGE-1/2/L (macro averages).
MetricReport generation_report(const std::vector<std::string>& hypotheses,
                               const std::vector<std::string>& references);

}  // namespace kgd::metrics
