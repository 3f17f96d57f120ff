#include "kgd/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kgd/random.hpp"
#include "kgd/text.hpp"

namespace kgd {

using nlohmann::json;

namespace {

std::optional<long long> as_integer(const std::string& s) {
    if (s.empty()) return std::nullopt;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

bool id_less(const std::string& a, const std::string& b) {
    const auto ia = as_integer(a);
    const auto ib = as_integer(b);
    if (ia && ib) return *ia < *ib;
    if (ia != ib && (ia || ib)) return ia.has_value();  // numeric ids before others
    return a < b;
}

std::string id_from_json(const json& v, const std::string& what) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw ParseError(what + " must be a string or integer");
}

json id_to_json(const std::string& id) {
    if (auto v = as_integer(id)) return *v;
    return id;
}

std::string clean_text(const std::string& raw) { return text::normalize_whitespace(text::escape_reserved(raw)); }

// JSON parse that rejects duplicate keys within any object.
json parse_strict(const std::string& s, const std::string& what) {
    std::vector<std::set<std::string>> keys;
    std::string duplicate;
    json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
        switch (event) {
            case json::parse_event_t::object_start:
                keys.emplace_back();
                break;
            case json::parse_event_t::object_end:
                if (!keys.empty()) keys.pop_back();
                break;
            case json::parse_event_t::key:
                if (!keys.empty() && !keys.back().insert(parsed.get<std::string>()).second && duplicate.empty())
                    duplicate = parsed.get<std::string>();
                break;
            default:
                break;
        }
        return true;
    };
    json j;
    try {
        j = json::parse(s, cb);
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
    if (!duplicate.empty()) throw ParseError(what + ": duplicate key '" + duplicate + "'");
    return j;
}

std::vector<std::string> history_pieces(const std::vector<Turn>& turns) {
    std::vector<std::string> pieces;
    for (const auto& t : turns) {
        pieces.emplace_back(t.speaker == Speaker::User ? text::kUser : text::kSys);
        for (auto& w : text::split_whitespace(t.text)) pieces.push_back(std::move(w));
    }
    return pieces;
}

std::size_t piece_tokens(const std::string& piece, const LinearizeOptions& options) {
    if (text::is_tag(piece)) return options.count_tags ? 1 : 0;
    return text::count_tokens(piece);
}

}  // namespace

bool ref_less(const KnowledgeRef& a, const KnowledgeRef& b) {
    if (a.domain != b.domain) return a.domain < b.domain;
    if (a.entity_id != b.entity_id) return id_less(a.entity_id, b.entity_id);
    return id_less(a.doc_id, b.doc_id);
}

json ref_to_json(const KnowledgeRef& ref) {
    return {{"domain", ref.domain}, {"entity_id", id_to_json(ref.entity_id)}, {"doc_id", id_to_json(ref.doc_id)}};
}

KnowledgeRef ref_from_json(const json& j) {
    if (!j.is_object() || !j.contains("domain") || !j.contains("entity_id") || !j.contains("doc_id"))
        throw ParseError("knowledge reference needs domain, entity_id, doc_id");
    return {j["domain"].get<std::string>(), id_from_json(j["entity_id"], "entity_id"), id_from_json(j["doc_id"], "doc_id")};
}

// ---------------------------------------------------------------------------
// KnowledgeBase

KnowledgeBase::KnowledgeBase(std::vector<KnowledgeSnippet> snippets) : snippets_(std::move(snippets)) {
    std::stable_sort(snippets_.begin(), snippets_.end(),
                     [](const auto& a, const auto& b) { return ref_less(a.ref(), b.ref()); });
    for (std::size_t i = 0; i < snippets_.size(); ++i) {
        auto& s = snippets_[i];
        if (s.is_domain_level() && s.entity_name.empty()) s.entity_name = s.domain;
        if (s.entity_name.empty())
            throw ParseError("knowledge " + s.domain + "/" + s.entity_id + "/" + s.doc_id + " has no entity name");
        if (!ref_index_.emplace(s.ref(), i).second)
            throw ParseError("duplicate knowledge key " + s.domain + "/" + s.entity_id + "/" + s.doc_id);
        auto& slot = entity_index_[{s.domain, s.entity_id}];
        if (slot.empty()) entities_.push_back({s.domain, s.entity_id, s.entity_name});
        slot.push_back(i);
    }
}

const std::vector<std::size_t>& KnowledgeBase::snippets_of(const std::string& domain,
                                                           const std::string& entity_id) const {
    static const std::vector<std::size_t> empty;
    auto it = entity_index_.find({domain, entity_id});
    return it == entity_index_.end() ? empty : it->second;
}

std::optional<std::size_t> KnowledgeBase::find(const KnowledgeRef& ref) const {
    auto it = ref_index_.find(ref);
    if (it == ref_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<EntityRef> KnowledgeBase::entity(const std::string& domain, const std::string& entity_id) const {
    for (const auto& e : entities_)
        if (e.domain == domain && e.entity_id == entity_id) return e;
    return std::nullopt;
}

std::vector<std::string> KnowledgeBase::domains() const {
    std::vector<std::string> out;
    for (const auto& e : entities_)
        if (std::find(out.begin(), out.end(), e.domain) == out.end()) out.push_back(e.domain);
    return out;
}

// ---------------------------------------------------------------------------
// I/O

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

Corpus parse_corpus(const std::string& logs_json, const std::optional<std::string>& labels_json) {
    const json logs = parse_strict(logs_json, "logs");
    if (!logs.is_array()) throw ParseError("logs: expected an array of dialogues");
    Corpus corpus;
    corpus.reserve(logs.size());
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const auto& d = logs[i];
        if (!d.is_array() || d.empty()) throw ParseError("logs[" + std::to_string(i) + "]: expected a non-empty turn array");
        Dialogue dialogue;
        dialogue.id = std::to_string(i);
        for (std::size_t t = 0; t < d.size(); ++t) {
            const auto& turn = d[t];
            const std::string where = "logs[" + std::to_string(i) + "][" + std::to_string(t) + "]";
            if (!turn.is_object() || !turn.contains("speaker") || !turn.contains("text") ||
                !turn["speaker"].is_string() || !turn["text"].is_string())
                throw ParseError(where + ": expected {speaker, text}");
            const auto speaker = turn["speaker"].get<std::string>();
            if (speaker != "U" && speaker != "S") throw ParseError(where + ": speaker must be \"U\" or \"S\"");
            Turn parsed{speaker == "U" ? Speaker::User : Speaker::System, clean_text(turn["text"].get<std::string>())};
            if (parsed.text.empty()) throw ParseError(where + ": empty text");
            dialogue.turns.push_back(std::move(parsed));
        }
        corpus.push_back(std::move(dialogue));
    }
    if (!labels_json) return corpus;

    const json labels = parse_strict(*labels_json, "labels");
    if (!labels.is_array()) throw ParseError("labels: expected an array");
    if (labels.size() != corpus.size())
        throw AlignmentError("labels has " + std::to_string(labels.size()) + " entries but logs has " +
                             std::to_string(corpus.size()) + " dialogues");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& l = labels[i];
        const std::string where = "labels[" + std::to_string(i) + "]";
        if (!l.is_object() || !l.contains("target") || !l["target"].is_boolean())
            throw ParseError(where + ": expected {target: bool, ...}");
        TurnLabel label;
        label.is_knowledge_seeking = l["target"].get<bool>();
        if (l.contains("knowledge") && l["knowledge"].is_array()) {
            for (const auto& k : l["knowledge"]) {
                if (!k.is_object() || !k.contains("domain") || !k.contains("entity_id") || !k.contains("doc_id"))
                    throw ParseError(where + ": knowledge entries need domain, entity_id, doc_id");
                label.knowledge_refs.push_back({k["domain"].get<std::string>(),
                                                id_from_json(k["entity_id"], where + ".entity_id"),
                                                id_from_json(k["doc_id"], where + ".doc_id")});
            }
        }
        if (!label.is_knowledge_seeking && !label.knowledge_refs.empty())
            throw ParseError(where + ": knowledge given for a non-knowledge-seeking turn");
        if (l.contains("response") && l["response"].is_string()) label.response = clean_text(l["response"].get<std::string>());
        if (corpus[i].turns.back().speaker != Speaker::User)
            throw ParseError(where + ": labeled dialogue must end with a user turn");
        corpus[i].label = std::move(label);
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& logs_path, const std::optional<std::filesystem::path>& labels_path) {
    std::optional<std::string> labels;
    if (labels_path) labels = read_file(*labels_path);
    return parse_corpus(read_file(logs_path), labels);
}

KnowledgeBase parse_knowledge_base(const std::string& json_text) {
    const json root = parse_strict(json_text, "knowledge");
    if (!root.is_object()) throw ParseError("knowledge: expected an object keyed by domain");
    std::vector<KnowledgeSnippet> snippets;
    for (const auto& [domain, entities] : root.items()) {
        if (!entities.is_object()) throw ParseError("knowledge." + domain + ": expected an object keyed by entity");
        for (const auto& [entity_id, entity] : entities.items()) {
            const std::string where = "knowledge." + domain + "." + entity_id;
            if (!entity.is_object() || !entity.contains("docs") || !entity["docs"].is_object())
                throw ParseError(where + ": expected {name, docs}");
            std::string name;
            if (entity.contains("name") && entity["name"].is_string()) name = entity["name"].get<std::string>();
            if (entity_id == kDomainLevel) name = domain;
            for (const auto& [doc_id, doc] : entity["docs"].items()) {
                if (!doc.is_object() || !doc.contains("title") || !doc.contains("body"))
                    throw ParseError(where + ".docs." + doc_id + ": expected {title, body}");
                snippets.push_back({domain, entity_id, clean_text(name), clean_text(doc["title"].get<std::string>()),
                                    clean_text(doc["body"].get<std::string>()), doc_id});
            }
        }
    }
    return KnowledgeBase(std::move(snippets));
}

KnowledgeBase load_knowledge_base(const std::filesystem::path& path) { return parse_knowledge_base(read_file(path)); }

std::string logs_to_json(const Corpus& corpus) {
    json logs = json::array();
    for (const auto& d : corpus) {
        json turns = json::array();
        for (const auto& t : d.turns) turns.push_back({{"speaker", t.speaker == Speaker::User ? "U" : "S"}, {"text", t.text}});
        logs.push_back(std::move(turns));
    }
    return logs.dump(2);
}

std::string labels_to_json(const Corpus& corpus) {
    json labels = json::array();
    for (const auto& d : corpus) {
        json l = json::object();
        const bool target = d.label && d.label->is_knowledge_seeking;
        l["target"] = target;
        if (target) {
            json refs = json::array();
            for (const auto& r : d.label->knowledge_refs)
                refs.push_back({{"domain", r.domain}, {"entity_id", id_to_json(r.entity_id)}, {"doc_id", id_to_json(r.doc_id)}});
            l["knowledge"] = std::move(refs);
            if (d.label->response) l["response"] = *d.label->response;
        }
        labels.push_back(std::move(l));
    }
    return labels.dump(2);
}

std::string knowledge_to_json(const KnowledgeBase& kb) {
    json root = json::object();
    for (const auto& s : kb.snippets()) {
        auto& entity = root[s.domain][s.entity_id];
        entity["name"] = s.is_domain_level() ? json(nullptr) : json(s.entity_name);
        entity["docs"][s.doc_id] = {{"title", s.question}, {"body", s.answer}};
    }
    return root.dump(2);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& logs_path, const std::filesystem::path& labels_path) {
    write_file(logs_path, logs_to_json(corpus));
    write_file(labels_path, labels_to_json(corpus));
}

// ---------------------------------------------------------------------------
// Linearization

std::size_t budget_tokens(const std::string& s, const LinearizeOptions& options) {
    std::size_t n = 0;
    for (const auto& piece : text::split_whitespace(s)) n += piece_tokens(piece, options);
    return n;
}

std::string truncate_left(const std::vector<std::string>& pieces, std::size_t max_tokens, const LinearizeOptions& options) {
    std::vector<std::size_t> cost(pieces.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) total += cost[i] = piece_tokens(pieces[i], options);
    std::size_t start = 0;
    while (total > max_tokens && start < pieces.size()) total -= cost[start++];
    return text::join(std::vector<std::string>(pieces.begin() + static_cast<std::ptrdiff_t>(start), pieces.end()));
}

std::string linearize_turns(const std::vector<Turn>& turns) { return text::join(history_pieces(turns)); }

std::string linearize_history(const Dialogue& dialogue, std::size_t max_tokens, const LinearizeOptions& options) {
    if (dialogue.turns.empty()) throw std::invalid_argument("linearize_history: dialogue " + dialogue.id + " has no turns");
    return truncate_left(history_pieces(dialogue.turns), max_tokens, options);
}

std::vector<Turn> parse_history(const std::string& linearized) {
    std::vector<Turn> turns;
    std::vector<std::string> words;
    auto flush = [&] {
        if (!turns.empty()) turns.back().text = text::join(words);
        words.clear();
    };
    for (auto& piece : text::split_whitespace(linearized)) {
        if (piece == text::kUser || piece == text::kSys) {
            flush();
            turns.push_back({piece == text::kUser ? Speaker::User : Speaker::System, {}});
        } else {
            if (turns.empty()) throw ParseError("parse_history: text before the first role tag");
            words.push_back(std::move(piece));
        }
    }
    flush();
    return turns;
}

std::string linearize_knowledge(const KnowledgeSnippet& snippet) {
    std::string out(text::kKng);
    if (!snippet.question.empty()) out += " " + snippet.question;
    out += " ";
    out += text::kAns;
    if (!snippet.answer.empty()) out += " " + snippet.answer;
    return out;
}

std::pair<std::string, std::string> parse_knowledge(const std::string& linearized) {
    std::vector<std::string> q, a;
    int segment = 0;
    for (auto& piece : text::split_whitespace(linearized)) {
        if (piece == text::kKng) segment = 1;
        else if (piece == text::kAns) segment = 2;
        else if (segment == 1) q.push_back(std::move(piece));
        else if (segment == 2) a.push_back(std::move(piece));
        else throw ParseError("parse_knowledge: missing <kng> tag");
    }
    return {text::join(q), text::join(a)};
}

GenerationContext build_generation_context(const Dialogue& history, const std::vector<KnowledgeSnippet>& topk,
                                           std::size_t max_tokens, KnowledgeBlockFormat format,
                                           const LinearizeOptions& options) {
    if (history.turns.empty() || history.turns.back().speaker != Speaker::User)
        throw std::invalid_argument("build_generation_context: dialogue " + history.id + " must end with a user turn");
    if (topk.size() > static_cast<std::size_t>(text::kMaxRankedKnowledge))
        throw std::invalid_argument("build_generation_context: at most 5 knowledge snippets");
    std::vector<Turn> earlier(history.turns.begin(), history.turns.end() - 1);
    auto pieces = history_pieces(earlier);
    for (std::size_t k = topk.size(); k >= 1; --k) {
        const auto& s = topk[k - 1];
        pieces.push_back(text::ranked_knowledge_tag(static_cast<int>(k)));
        if (format == KnowledgeBlockFormat::EntityAnswer) {
            pieces.emplace_back(text::kEnt);
            for (auto& w : text::split_whitespace(s.entity_name)) pieces.push_back(std::move(w));
        } else {
            pieces.emplace_back(text::kKng);
            for (auto& w : text::split_whitespace(s.question)) pieces.push_back(std::move(w));
        }
        pieces.emplace_back(text::kAns);
        for (auto& w : text::split_whitespace(s.answer)) pieces.push_back(std::move(w));
    }
    pieces.emplace_back(text::kUser);
    for (auto& w : text::split_whitespace(history.turns.back().text)) pieces.push_back(std::move(w));

    GenerationContext ctx;
    ctx.text = truncate_left(pieces, max_tokens, options);
    ctx.has_knowledge = !topk.empty();
    for (const auto& piece : text::split_whitespace(ctx.text))
        if (piece.rfind("<kng_", 0) == 0) ++ctx.knowledge_blocks;
    return ctx;
}

std::vector<std::vector<std::size_t>> split_kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("split_kfold: k must be at least 2");
    if (k > n) throw std::invalid_argument("split_kfold: k=" + std::to_string(k) + " exceeds item count " + std::to_string(n));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t i = 0; i < n; ++i) folds[i % k].push_back(order[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

}  // namespace kgd
