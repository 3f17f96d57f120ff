#include "kgd/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "kgd/text.hpp"

namespace kgd {

namespace {

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

std::string strip_stress(const std::string& phone) {
    std::string out = phone;
    while (!out.empty() && std::isdigit(static_cast<unsigned char>(out.back()))) out.pop_back();
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::map<std::string, double> phoneme_bigrams(const std::vector<std::string>& phones) {
    std::vector<std::string> padded{"^"};
    for (const auto& p : phones) padded.push_back(strip_stress(p));
    padded.push_back("$");
    std::map<std::string, double> out;
    for (std::size_t i = 0; i + 1 < padded.size(); ++i) out["p:" + padded[i] + "_" + padded[i + 1]] += 1.0;
    return out;
}

std::map<std::string, double> char_bigrams(const std::string& word) {
    const std::string padded = "^" + word + "$";
    std::map<std::string, double> out;
    for (std::size_t i = 0; i + 1 < padded.size(); ++i) out["c:" + padded.substr(i, 2)] += 1.0;
    return out;
}

double clamp_cos(double c) { return std::max(-1.0, std::min(1.0, c)); }

}  // namespace

void AugmentConfig::validate() const {
    if (!(replace_rate_low >= 0.0 && replace_rate_low <= replace_rate_high && replace_rate_high <= 1.0))
        throw ConfigError("replace rates must satisfy 0 <= low <= high <= 1");
    if (!in_unit(ena_probability) || !in_unit(ena_delete_prob))
        throw ConfigError("entity augmentation probabilities must lie in [0, 1]");
    if (neighbor_k == 0) throw ConfigError("neighbor_k must be positive");
}

Lexicon parse_lexicon(const std::string& content) {
    Lexicon lex;
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::normalize_whitespace(line).empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("lexicon line " + std::to_string(lineno) + ": expected word<TAB>phonemes");
        const std::string word = text::lowercase(text::normalize_whitespace(line.substr(0, tab)));
        auto phones = text::split_whitespace(line.substr(tab + 1));
        for (auto& p : phones)
            while (p.size() > 1 && std::isdigit(static_cast<unsigned char>(p.back()))) p.pop_back();
        if (word.empty() || phones.empty())
            throw ParseError("lexicon line " + std::to_string(lineno) + ": empty word or pronunciation");
        lex.emplace(word, std::move(phones));
    }
    return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) { return parse_lexicon(read_file(path)); }

std::string lexicon_to_text(const Lexicon& lexicon) {
    std::string out;
    for (const auto& [w, phones] : lexicon) out += w + "\t" + text::join(phones) + "\n";
    return out;
}

double sparse_dot(const SparseVector& a, const SparseVector& b) {
    double s = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first < b[j].first) {
            ++i;
        } else if (a[i].first > b[j].first) {
            ++j;
        } else {
            s += a[i].second * b[j].second;
            ++i;
            ++j;
        }
    }
    return s;
}

SparseVector PhoneticIndex::Space::restrict(const std::map<std::string, double>& raw) const {
    double norm = 0;
    for (const auto& [f, v] : raw) norm += v * v;
    norm = std::sqrt(norm);
    SparseVector out;
    if (norm == 0) return out;
    for (const auto& [f, v] : raw) {
        auto it = features.find(f);
        if (it != features.end()) out.emplace_back(it->second, v / norm);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::uint32_t PhoneticIndex::Space::hash_code(const SparseVector& v, std::size_t table, int bits) const {
    std::uint32_t code = 0;
    for (int b = 0; b < bits; ++b) {
        const auto& plane = planes[table * static_cast<std::size_t>(bits) + static_cast<std::size_t>(b)];
        double s = 0;
        for (const auto& [f, x] : v) s += plane[static_cast<std::size_t>(f)] * x;
        if (s >= 0) code |= (1u << b);
    }
    return code;
}

void PhoneticIndex::build_space(Space& space, const std::vector<std::map<std::string, double>>& raw) {
    std::set<std::string> names;
    for (const auto& r : raw)
        for (const auto& [f, v] : r) names.insert(f);
    int next = 0;
    for (const auto& n : names) space.features.emplace(n, next++);
    for (const auto& r : raw) space.embeddings.push_back(space.restrict(r));

    Rng rng(text::mix_seed(lsh_.seed, names.empty() ? "" : *names.begin()));
    const std::size_t planes = static_cast<std::size_t>(lsh_.tables) * static_cast<std::size_t>(lsh_.bits);
    space.planes.assign(planes, std::vector<double>(names.size()));
    for (auto& plane : space.planes)
        for (auto& x : plane) x = rng.normal();
    space.buckets.assign(static_cast<std::size_t>(lsh_.tables), {});
    for (std::size_t i = 0; i < space.embeddings.size(); ++i)
        for (std::size_t t = 0; t < space.buckets.size(); ++t)
            space.buckets[t][space.hash_code(space.embeddings[i], t, lsh_.bits)].push_back(i);
}

PhoneticIndex PhoneticIndex::build(const Lexicon& lexicon, const LshConfig& lsh) {
    if (lexicon.empty()) throw std::invalid_argument("phonetic index needs a non-empty lexicon");
    if (lsh.tables < 1 || lsh.bits < 1 || lsh.bits > 30)
        throw std::invalid_argument("hash index needs tables >= 1 and 1 <= bits <= 30");
    PhoneticIndex idx;
    idx.lsh_ = lsh;
    for (const auto& [w, phones] : lexicon) idx.lexicon_.emplace(text::lowercase(w), phones);
    std::vector<std::map<std::string, double>> phon, spell;
    for (const auto& [w, phones] : idx.lexicon_) {
        idx.word_index_.emplace(w, idx.vocabulary_.size());
        idx.vocabulary_.push_back(w);
        phon.push_back(phoneme_bigrams(phones));
        spell.push_back(char_bigrams(w));
    }
    idx.build_space(idx.phonetic_, phon);
    idx.build_space(idx.spelling_, spell);
    return idx;
}

bool PhoneticIndex::in_lexicon(const std::string& word) const {
    return word_index_.count(text::lowercase(word)) > 0;
}

const PhoneticIndex::Space& PhoneticIndex::space_for(const std::string& word) const {
    return in_lexicon(word) ? phonetic_ : spelling_;
}

SparseVector PhoneticIndex::embed(const std::string& word) const {
    const std::string w = text::lowercase(word);
    auto it = word_index_.find(w);
    if (it != word_index_.end()) return phonetic_.embeddings[it->second];
    return spelling_.restrict(char_bigrams(w));
}

double PhoneticIndex::angular_distance(const std::string& a, const std::string& b) const {
    const std::string la = text::lowercase(a), lb = text::lowercase(b);
    if (in_lexicon(la) && in_lexicon(lb)) return std::acos(clamp_cos(sparse_dot(embed(la), embed(lb))));
    // At least one side lacks a pronunciation: compare spellings.
    const auto va = spelling_.restrict(char_bigrams(la));
    const auto vb = spelling_.restrict(char_bigrams(lb));
    if (va.empty() || vb.empty()) return M_PI / 2;
    return std::acos(clamp_cos(sparse_dot(va, vb)));
}

std::vector<Neighbor> PhoneticIndex::rank(const std::string& word, const SparseVector& q, const Space& space,
                                          const std::vector<std::size_t>& candidates, std::size_t k) const {
    std::vector<Neighbor> out;
    for (std::size_t i : candidates) {
        if (vocabulary_[i] == word) continue;
        const double c = sparse_dot(q, space.embeddings[i]);
        if (c <= 1e-12) continue;
        out.push_back({vocabulary_[i], std::acos(clamp_cos(c))});
    }
    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.word < b.word;
    });
    if (out.size() > k) out.resize(k);
    return out;
}

std::vector<Neighbor> PhoneticIndex::neighbors(const std::string& word, std::size_t k, std::size_t* examined) const {
    const std::string w = text::lowercase(word);
    const Space& space = space_for(w);
    const SparseVector q = embed(w);
    if (vocabulary_.size() <= lsh_.exhaustive_below) {
        if (examined) *examined = vocabulary_.size();
        return exact_neighbors(w, k);
    }
    std::vector<char> seen(vocabulary_.size(), 0);
    std::vector<std::size_t> candidates;
    auto probe = [&](std::size_t t, std::uint32_t code) {
        auto it = space.buckets[t].find(code);
        if (it == space.buckets[t].end()) return;
        for (std::size_t i : it->second)
            if (!seen[i]) {
                seen[i] = 1;
                candidates.push_back(i);
            }
    };
    if (!q.empty()) {
        for (std::size_t t = 0; t < space.buckets.size(); ++t) {
            const std::uint32_t code = space.hash_code(q, t, lsh_.bits);
            probe(t, code);
            if (lsh_.multiprobe)
                for (int b = 0; b < lsh_.bits; ++b) probe(t, code ^ (1u << b));
        }
    }
    std::sort(candidates.begin(), candidates.end());
    if (examined) *examined = candidates.size();
    return rank(w, q, space, candidates, k);
}

std::vector<Neighbor> PhoneticIndex::exact_neighbors(const std::string& word, std::size_t k) const {
    const std::string w = text::lowercase(word);
    std::vector<std::size_t> all(vocabulary_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return rank(w, embed(w), space_for(w), all, k);
}

std::vector<std::string> PhoneticIndex::neighbor_words(const std::string& word, std::size_t k) const {
    std::vector<std::string> out;
    for (auto& n : neighbors(word, k)) out.push_back(std::move(n.word));
    return out;
}

// ---------------------------------------------------------------- AEI

InjectionResult inject_errors_detailed(const std::string& utterance, const PhoneticIndex& index,
                                       const AugmentConfig& config, Rng& rng) {
    config.validate();
    auto pieces = text::split_whitespace(utterance);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < pieces.size(); ++i)
        if (!text::is_tag(pieces[i]) && !text::split_word(pieces[i]).core.empty()) eligible.push_back(i);
    if (eligible.empty()) throw std::invalid_argument("utterance has no words to replace");

    InjectionResult res;
    res.word_count = eligible.size();
    res.rate = rng.uniform(config.replace_rate_low, config.replace_rate_high);
    const double want = std::ceil(res.rate * static_cast<double>(eligible.size()) - 1e-9);
    const std::size_t m = std::min(eligible.size(), static_cast<std::size_t>(std::max(0.0, want)));
    for (std::size_t j : rng.sample_without_replacement(eligible.size(), m)) res.positions.push_back(eligible[j]);
    std::sort(res.positions.begin(), res.positions.end());

    for (std::size_t pos : res.positions) {
        const auto parts = text::split_word(pieces[pos]);
        const auto nbrs = index.neighbor_words(text::lowercase(parts.core), config.neighbor_k);
        if (nbrs.empty()) continue;
        const std::string& pick = nbrs[rng.uniform_index(nbrs.size())];
        const std::string replaced = parts.prefix + pick + parts.suffix;
        if (replaced != pieces[pos]) ++res.changed;
        pieces[pos] = replaced;
    }
    res.text = text::join(pieces);
    return res;
}

std::string inject_errors(const std::string& utterance, const PhoneticIndex& index, const AugmentConfig& config,
                          Rng& rng) {
    return inject_errors_detailed(utterance, index, config, rng).text;
}

// ---------------------------------------------------------------- ENA

namespace {

struct Piece {
    std::string text;
    bool entity = false;
};
using Layout = std::vector<std::vector<Piece>>;

Layout to_layout(const Dialogue& d) {
    Layout out;
    for (const auto& t : d.turns) {
        std::vector<Piece> row;
        for (auto& p : text::split_whitespace(t.text)) row.push_back({std::move(p), false});
        out.push_back(std::move(row));
    }
    return out;
}

Dialogue from_layout(const Dialogue& base, const Layout& layout) {
    Dialogue d = base;
    for (std::size_t t = 0; t < layout.size(); ++t) {
        std::vector<std::string> words;
        for (const auto& p : layout[t]) words.push_back(p.text);
        d.turns[t].text = text::join(words);
    }
    return d;
}

std::string core_key(const std::string& piece) { return text::lowercase(text::split_word(piece).core); }

std::size_t total_gaps(const Layout& layout) {
    std::size_t n = 0;
    for (const auto& row : layout) n += row.size() + 1;
    return n;
}

WordGap gap_at(const Layout& layout, std::size_t index) {
    for (std::size_t t = 0; t < layout.size(); ++t) {
        if (index <= layout[t].size()) return {t, index};
        index -= layout[t].size() + 1;
    }
    throw std::out_of_range("word gap index out of range");
}

std::size_t gap_index(const Layout& layout, WordGap g) {
    std::size_t n = 0;
    for (std::size_t t = 0; t < g.turn; ++t) n += layout[t].size() + 1;
    return n + g.position;
}

void check_gap(const Layout& layout, WordGap g) {
    if (g.turn >= layout.size() || g.position > layout[g.turn].size())
        throw std::out_of_range("word gap outside the dialogue");
}

// Returns the removed pieces and the gap they leave behind.
std::vector<Piece> cut_part(Layout& layout, const EntityMention& m, std::size_t split, bool move_tail,
                            WordGap& origin) {
    auto& row = layout.at(m.turn);
    if (split == 0 || split >= m.length || m.start + m.length > row.size())
        throw std::out_of_range("invalid entity split");
    const std::size_t b = move_tail ? m.start + split : m.start;
    const std::size_t e = move_tail ? m.start + m.length : m.start + split;
    std::vector<Piece> part(row.begin() + static_cast<std::ptrdiff_t>(b), row.begin() + static_cast<std::ptrdiff_t>(e));
    row.erase(row.begin() + static_cast<std::ptrdiff_t>(b), row.begin() + static_cast<std::ptrdiff_t>(e));
    origin = {m.turn, b};
    return part;
}

void paste(Layout& layout, const std::vector<Piece>& part, WordGap g) {
    check_gap(layout, g);
    auto& row = layout[g.turn];
    row.insert(row.begin() + static_cast<std::ptrdiff_t>(g.position), part.begin(), part.end());
}

}  // namespace

std::vector<EntityMention> find_entity_mentions(const Dialogue& dialogue, const std::string& name) {
    std::vector<std::string> key;
    for (const auto& w : text::split_whitespace(name)) {
        auto k = core_key(w);
        if (!k.empty()) key.push_back(k);
    }
    std::vector<EntityMention> out;
    if (key.empty()) return out;
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
        const auto pieces = text::split_whitespace(dialogue.turns[t].text);
        for (std::size_t s = 0; s + key.size() <= pieces.size(); ++s) {
            bool ok = true;
            for (std::size_t j = 0; j < key.size() && ok; ++j) ok = core_key(pieces[s + j]) == key[j];
            if (ok) out.push_back({t, s, key.size()});
        }
    }
    return out;
}

std::size_t count_word_gaps(const Dialogue& dialogue) { return total_gaps(to_layout(dialogue)); }

Dialogue move_entity_part(const Dialogue& dialogue, const EntityMention& mention, std::size_t split, bool move_tail,
                          WordGap target) {
    Layout layout = to_layout(dialogue);
    WordGap origin;
    auto part = cut_part(layout, mention, split, move_tail, origin);
    paste(layout, part, target);
    return from_layout(dialogue, layout);
}

Dialogue insert_words(const Dialogue& dialogue, const std::string& words, WordGap target) {
    Layout layout = to_layout(dialogue);
    std::vector<Piece> part;
    for (auto& w : text::split_whitespace(words)) part.push_back({std::move(w), true});
    paste(layout, part, target);
    return from_layout(dialogue, layout);
}

EnaResult augment_entity_name_detailed(const Dialogue& dialogue, const KnowledgeSnippet& candidate, bool is_positive,
                                       const AugmentConfig& config, Rng& rng) {
    config.validate();
    EnaResult res{dialogue, EnaPath::Skipped, false, 0};
    if (dialogue.turns.empty() || !rng.bernoulli(config.ena_probability)) return res;
    const auto mentions = find_entity_mentions(dialogue, candidate.entity_name);

    if (!is_positive) {
        if (!mentions.empty()) return res;
        Layout layout = to_layout(dialogue);
        std::vector<Piece> part;
        for (auto& w : text::split_whitespace(candidate.entity_name)) part.push_back({std::move(w), true});
        if (part.empty()) return res;
        paste(layout, part, gap_at(layout, rng.uniform_index(total_gaps(layout))));
        res.dialogue = from_layout(dialogue, layout);
        res.path = EnaPath::Negative;
        return res;
    }

    if (mentions.empty()) return res;
    res.path = EnaPath::Positive;
    const EntityMention m = mentions[rng.uniform_index(mentions.size())];
    Layout layout = to_layout(dialogue);
    for (std::size_t j = 0; j < m.length; ++j) layout[m.turn][m.start + j].entity = true;

    if (m.length >= 2) {
        const std::size_t split = 1 + rng.uniform_index(m.length - 1);
        const bool move_tail = rng.bernoulli(0.5);
        Layout trial = layout;
        WordGap origin;
        auto part = cut_part(trial, m, split, move_tail, origin);
        const std::size_t gaps = total_gaps(trial);
        if (gaps > 1) {
            const std::size_t skip = gap_index(trial, origin);
            std::size_t pick = rng.uniform_index(gaps - 1);
            if (pick >= skip) ++pick;
            paste(trial, part, gap_at(trial, pick));
            layout = std::move(trial);
            res.moved = true;
        }
    }

    for (auto& row : layout) {
        for (std::size_t i = 0; i < row.size();) {
            if (row[i].entity && row.size() > 1 && rng.bernoulli(config.ena_delete_prob)) {
                row.erase(row.begin() + static_cast<std::ptrdiff_t>(i));
                ++res.deleted;
            } else {
                ++i;
            }
        }
    }
    res.dialogue = from_layout(dialogue, layout);
    return res;
}

Dialogue augment_entity_name(const Dialogue& dialogue, const KnowledgeSnippet& candidate, bool is_positive,
                             const AugmentConfig& config, Rng& rng) {
    return augment_entity_name_detailed(dialogue, candidate, is_positive, config, rng).dialogue;
}

// ---------------------------------------------------------------- TST

ConfusionTableRoundTrip::ConfusionTableRoundTrip(std::vector<std::pair<std::string, std::string>> table) {
    for (auto& [from, to] : table) {
        std::vector<std::string> key;
        for (const auto& w : text::split_whitespace(from)) key.push_back(text::lowercase(w));
        if (key.empty()) throw std::invalid_argument("confusion entry with empty source phrase");
        table_.emplace_back(std::move(key), text::normalize_whitespace(to));
    }
    std::stable_sort(table_.begin(), table_.end(),
                     [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
}

ConfusionTableRoundTrip ConfusionTableRoundTrip::from_text(const std::string& content) {
    std::vector<std::pair<std::string, std::string>> rows;
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::normalize_whitespace(line).empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("confusion table line " + std::to_string(lineno) + ": expected two TAB-separated columns");
        rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return ConfusionTableRoundTrip(std::move(rows));
}

ConfusionTableRoundTrip ConfusionTableRoundTrip::from_file(const std::filesystem::path& path) {
    return from_text(read_file(path));
}

std::string ConfusionTableRoundTrip::apply(const std::string& line) const {
    const auto pieces = text::split_whitespace(line);
    std::vector<std::string> lower;
    for (const auto& p : pieces) lower.push_back(text::lowercase(p));
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < pieces.size()) {
        bool hit = false;
        for (const auto& [key, to] : table_) {
            if (i + key.size() > pieces.size()) continue;
            if (!std::equal(key.begin(), key.end(), lower.begin() + static_cast<std::ptrdiff_t>(i))) continue;
            if (!to.empty()) out.push_back(to);
            i += key.size();
            hit = true;
            break;
        }
        if (!hit) out.push_back(pieces[i++]);
    }
    return text::join(out);
}

std::vector<std::string> ConfusionTableRoundTrip::transcribe(const std::vector<std::string>& lines) {
    std::vector<std::string> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(apply(l));
    return out;
}

std::vector<std::string> CommandRoundTrip::transcribe(const std::vector<std::string>& lines) {
    static int counter = 0;
    const auto dir = std::filesystem::temp_directory_path();
    const std::string stem = "kgd_tst_" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
    const auto in_path = dir / (stem + ".in");
    const auto out_path = dir / (stem + ".out");
    {
        std::ofstream f(in_path, std::ios::binary);
        for (const auto& l : lines) f << l << '\n';
    }
    const std::string cmd = command_ + " < '" + in_path.string() + "' > '" + out_path.string() + "'";
    const int status = std::system(cmd.c_str());
    std::vector<std::string> out;
    std::string error;
    if (status != 0) {
        error = "command exited with status " + std::to_string(status);
    } else {
        std::ifstream f(out_path, std::ios::binary);
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            out.push_back(line);
        }
        if (out.size() != lines.size())
            error = "expected " + std::to_string(lines.size()) + " transcript lines, got " + std::to_string(out.size());
    }
    std::error_code ec;
    std::filesystem::remove(in_path, ec);
    std::filesystem::remove(out_path, ec);
    if (!error.empty()) throw std::runtime_error(error);
    return out;
}

std::string tst_transform(const std::string& utterance, SpeechRoundTrip& adapter) {
    std::vector<std::string> out;
    try {
        out = adapter.transcribe({utterance});
    } catch (const TstError&) {
        throw;
    } catch (const std::exception& e) {
        throw TstError(utterance, e.what());
    }
    if (out.size() != 1) throw TstError(utterance, "adapter returned " + std::to_string(out.size()) + " lines");
    return out[0];
}

// ---------------------------------------------------------------- corpus

Corpus augment_corpus(const Corpus& corpus, const PhoneticIndex& index, const AugmentConfig& config,
                      SpeechRoundTrip* adapter, AugmentTasks tasks) {
    config.validate();
    if (tasks.tst && adapter == nullptr) throw ConfigError("text-speech-text augmentation requires an adapter");
    Corpus out = corpus;
    if (tasks.aei) {
        for (const auto& d : corpus) {
            Dialogue copy = d;
            copy.id = d.id + "#aei";
            Rng rng(text::mix_seed(config.seed, copy.id));
            for (auto& t : copy.turns) {
                const auto pieces = text::split_whitespace(t.text);
                const bool any = std::any_of(pieces.begin(), pieces.end(), [](const std::string& p) {
                    return !text::is_tag(p) && !text::split_word(p).core.empty();
                });
                if (any) t.text = inject_errors(t.text, index, config, rng);
            }
            out.push_back(std::move(copy));
        }
    }
    if (tasks.tst) {
        for (const auto& d : corpus) {
            Dialogue copy = d;
            copy.id = d.id + "#tst";
            std::vector<std::string> lines;
            for (const auto& t : d.turns) lines.push_back(t.text);
            std::vector<std::string> heard;
            try {
                heard = adapter->transcribe(lines);
            } catch (const std::exception& e) {
                throw TstError(lines.empty() ? std::string() : lines.front(), e.what());
            }
            if (heard.size() != lines.size())
                throw TstError(lines.empty() ? std::string() : lines.front(), "transcript count mismatch");
            for (std::size_t i = 0; i < heard.size(); ++i) {
                std::string h = text::normalize_whitespace(text::escape_reserved(heard[i]));
                if (h.empty()) throw TstError(lines[i], "adapter returned an empty transcript");
                copy.turns[i].text = std::move(h);
            }
            out.push_back(std::move(copy));
        }
    }
    return out;
}

}  // namespace kgd
