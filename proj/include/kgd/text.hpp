#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kgd::text {

// Reserved block tags. Each counts as a single token.
inline constexpr std::string_view kUser = "<user>";
inline constexpr std::string_view kSys = "<sys>";
inline constexpr std::string_view kKng = "<kng>";
inline constexpr std::string_view kEnt = "<ent>";
inline constexpr std::string_view kAns = "<ans>";
inline constexpr std::string_view kResp = "<resp>";
inline constexpr int kMaxRankedKnowledge = 5;

// "<kng_k>" for k in 1..5.
std::string ranked_knowledge_tag(int k);

bool is_tag(std::string_view token);
const std::vector<std::string>& reserved_tags();

// Rewrites reserved tags that occur literally in raw text ("<user>" or the
// angle-bracket form "⟨user⟩") as "[user]". Idempotent.
std::string escape_reserved(std::string_view raw);

std::string normalize_whitespace(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep = " ");
std::string lowercase(std::string_view s);

// Lowercases and detaches punctuation; tags survive as single tokens.
std::vector<std::string> tokenize(std::string_view s);
std::size_t count_tokens(std::string_view s);

// tokenize() minus tags and pure-punctuation tokens.
std::vector<std::string> word_tokens(std::string_view s);

bool is_punctuation_token(std::string_view token);

// Leading/trailing punctuation of a whitespace word: {prefix, core, suffix}.
struct WordParts {
    std::string prefix;
    std::string core;
    std::string suffix;
};
WordParts split_word(std::string_view word);

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt);

}  // namespace kgd::text
