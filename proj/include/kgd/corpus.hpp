#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace kgd {

class ParseError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class AlignmentError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Speaker { User, System };

struct Turn {
    Speaker speaker = Speaker::User;
    std::string text;
};

// Entity id used for knowledge that belongs to a whole domain.
inline constexpr const char* kDomainLevel = "*";

struct KnowledgeRef {
    std::string domain;
    std::string entity_id;
    std::string doc_id;

    bool is_domain_level() const { return entity_id == kDomainLevel; }
    auto operator<=>(const KnowledgeRef&) const = default;
};

// Orders by (domain, entity_id, doc_id) comparing numeric ids numerically.
bool ref_less(const KnowledgeRef& a, const KnowledgeRef& b);

// {domain, entity_id, doc_id} with numeric ids written as integers.
nlohmann::json ref_to_json(const KnowledgeRef& ref);
KnowledgeRef ref_from_json(const nlohmann::json& j);

struct TurnLabel {
    bool is_knowledge_seeking = false;
    std::vector<KnowledgeRef> knowledge_refs;
    std::optional<std::string> response;
};

struct Dialogue {
    std::string id;
    std::vector<Turn> turns;
    std::optional<TurnLabel> label;

    const Turn& last_turn() const { return turns.back(); }
};

using Corpus = std::vector<Dialogue>;

struct KnowledgeSnippet {
    std::string domain;
    std::string entity_id;
    std::string entity_name;
    std::string question;
    std::string answer;
    std::string doc_id;

    KnowledgeRef ref() const { return {domain, entity_id, doc_id}; }
    bool is_domain_level() const { return entity_id == kDomainLevel; }
};

struct EntityRef {
    std::string domain;
    std::string entity_id;
    std::string name;

    bool is_domain_level() const { return entity_id == kDomainLevel; }
    bool operator==(const EntityRef& o) const { return domain == o.domain && entity_id == o.entity_id; }
};

class KnowledgeBase {
public:
    KnowledgeBase() = default;
    explicit KnowledgeBase(std::vector<KnowledgeSnippet> snippets);

    const std::vector<KnowledgeSnippet>& snippets() const { return snippets_; }
    const std::vector<EntityRef>& entities() const { return entities_; }
    std::size_t size() const { return snippets_.size(); }
    const KnowledgeSnippet& operator[](std::size_t i) const { return snippets_[i]; }

    // Snippet indices for one entity (or domain pseudo-entity); empty if unknown.
    const std::vector<std::size_t>& snippets_of(const std::string& domain, const std::string& entity_id) const;
    std::optional<std::size_t> find(const KnowledgeRef& ref) const;
    std::optional<EntityRef> entity(const std::string& domain, const std::string& entity_id) const;
    std::vector<std::string> domains() const;

private:
    std::vector<KnowledgeSnippet> snippets_;
    std::vector<EntityRef> entities_;
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> entity_index_;
    std::map<KnowledgeRef, std::size_t> ref_index_;
};

// DSTC-format readers and writers.
Corpus load_corpus(const std::filesystem::path& logs_path,
                   const std::optional<std::filesystem::path>& labels_path = std::nullopt);
Corpus parse_corpus(const std::string& logs_json, const std::optional<std::string>& labels_json);
KnowledgeBase load_knowledge_base(const std::filesystem::path& path);
KnowledgeBase parse_knowledge_base(const std::string& json_text);

std::string logs_to_json(const Corpus& corpus);
std::string labels_to_json(const Corpus& corpus);
std::string knowledge_to_json(const KnowledgeBase& kb);
void save_corpus(const Corpus& corpus, const std::filesystem::path& logs_path,
                 const std::filesystem::path& labels_path);

struct LinearizeOptions {
    // Whether the reserved tags count toward the token budget.
    bool count_tags = true;
};

// "<user> U_1 <sys> S_1 ... <user> U_i", left-truncated to max_tokens.
std::string linearize_history(const Dialogue& dialogue, std::size_t max_tokens,
                              const LinearizeOptions& options = {});
std::string linearize_turns(const std::vector<Turn>& turns);
// Parses a linearized history back into turns (inverse of linearize_turns).
std::vector<Turn> parse_history(const std::string& linearized);

// "<kng> question <ans> answer"
std::string linearize_knowledge(const KnowledgeSnippet& snippet);
std::pair<std::string, std::string> parse_knowledge(const std::string& linearized);

enum class KnowledgeBlockFormat { EntityAnswer, QuestionAnswer };

struct GenerationContext {
    std::string text;
    bool has_knowledge = false;
    std::size_t knowledge_blocks = 0;
};

// History (all but the last user turn), then <kng_m> ... <kng_1> blocks so the
// best knowledge sits next to the final "<user> U_i", left-truncated.
GenerationContext build_generation_context(const Dialogue& history,
                                           const std::vector<KnowledgeSnippet>& topk,
                                           std::size_t max_tokens,
                                           KnowledgeBlockFormat format = KnowledgeBlockFormat::EntityAnswer,
                                           const LinearizeOptions& options = {});

// Drops whole pieces from the left until the token count fits. Tags are never split.
std::string truncate_left(const std::vector<std::string>& pieces, std::size_t max_tokens,
                          const LinearizeOptions& options = {});
std::size_t budget_tokens(const std::string& text, const LinearizeOptions& options = {});

// Shuffled partition of [0, n) into k folds whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> split_kfold(std::size_t n, std::size_t k, std::uint64_t seed);

template <typename T>
std::vector<std::vector<T>> split_kfold(const std::vector<T>& items, std::size_t k, std::uint64_t seed) {
    std::vector<std::vector<T>> out;
    for (const auto& fold : split_kfold(items.size(), k, seed)) {
        auto& f = out.emplace_back();
        for (auto i : fold) f.push_back(items[i]);
    }
    return out;
}

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace kgd
