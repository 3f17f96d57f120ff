#include "kgd/text.hpp"

#include <cctype>

namespace kgd::text {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::vector<std::string> build_tags() {
    std::vector<std::string> tags{std::string(kUser), std::string(kSys), std::string(kKng),
                                  std::string(kEnt),  std::string(kAns), std::string(kResp)};
    for (int k = 1; k <= kMaxRankedKnowledge; ++k) tags.push_back(ranked_knowledge_tag(k));
    return tags;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    if (from.empty()) return;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace

std::string ranked_knowledge_tag(int k) { return "<kng_" + std::to_string(k) + ">"; }

const std::vector<std::string>& reserved_tags() {
    static const std::vector<std::string> tags = build_tags();
    return tags;
}

bool is_tag(std::string_view token) {
    if (token.size() < 3 || token.front() != '<' || token.back() != '>') return false;
    for (const auto& t : reserved_tags())
        if (t == token) return true;
    return false;
}

std::string escape_reserved(std::string_view raw) {
    std::string out(raw);
    for (const auto& tag : reserved_tags()) {
        const std::string name = tag.substr(1, tag.size() - 2);
        const std::string bracketed = "[" + name + "]";
        replace_all(out, tag, bracketed);
        // U+27E8 / U+27E9 mathematical angle brackets.
        replace_all(out, "\xE2\x9F\xA8" + name + "\xE2\x9F\xA9", bracketed);
    }
    return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string normalize_whitespace(std::string_view s) { return join(split_whitespace(s)); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& chunk : split_whitespace(s)) {
        if (is_tag(chunk)) {
            out.push_back(chunk);
            continue;
        }
        const std::string lower = lowercase(chunk);
        std::string word;
        for (std::size_t i = 0; i < lower.size(); ++i) {
            const auto c = static_cast<unsigned char>(lower[i]);
            const bool joiner = (c == '\'' || c == '-') && !word.empty() && i + 1 < lower.size() &&
                                is_word_byte(static_cast<unsigned char>(lower[i + 1]));
            if (is_word_byte(c) || joiner) {
                word.push_back(static_cast<char>(c));
            } else {
                if (!word.empty()) out.push_back(std::move(word));
                word.clear();
                out.emplace_back(1, static_cast<char>(c));
            }
        }
        if (!word.empty()) out.push_back(std::move(word));
    }
    return out;
}

std::size_t count_tokens(std::string_view s) { return tokenize(s).size(); }

bool is_punctuation_token(std::string_view token) {
    if (token.empty()) return false;
    for (char c : token)
        if (is_word_byte(static_cast<unsigned char>(c))) return false;
    return true;
}

std::vector<std::string> word_tokens(std::string_view s) {
    std::vector<std::string> out;
    for (auto& t : tokenize(s))
        if (!is_tag(t) && !is_punctuation_token(t)) out.push_back(std::move(t));
    return out;
}

WordParts split_word(std::string_view word) {
    std::size_t b = 0;
    std::size_t e = word.size();
    while (b < e && !is_word_byte(static_cast<unsigned char>(word[b]))) ++b;
    while (e > b && !is_word_byte(static_cast<unsigned char>(word[e - 1]))) --e;
    return {std::string(word.substr(0, b)), std::string(word.substr(b, e - b)),
            std::string(word.substr(e))};
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) {
    std::uint64_t h = fnv1a(salt, 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL));
    // splitmix64 finalizer
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return h;
}

}  // namespace kgd::text
