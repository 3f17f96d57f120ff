#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kgd/augment.hpp"
#include "kgd/corpus.hpp"

namespace kgd::synthetic {

// Naive spelling-to-phoneme rules (digraphs first, doubled letters collapsed,
// silent final e). Good enough to give spelling variants similar sounds.
std::vector<std::string> letter_to_sound(const std::string& word);

// Lexicon over every word in `words` (lowercased cores, tags skipped).
Lexicon lexicon_for(const std::vector<std::string>& words);

// n distinct pronounceable pseudo-words with their pronunciations.
Lexicon random_lexicon(std::size_t n, std::uint64_t seed);

}  // namespace kgd::synthetic

namespace kgd::synthetic {

struct MiniCorpusConfig {
    std::size_t dialogues = 200;
    double test_fraction = 0.3;
    double knowledge_seeking_rate = 0.75;
    double domain_level_rate = 0.15;
    double interrogative_rate = 0.4;
    std::uint64_t seed = 0;
    AugmentConfig noise;
};

struct MiniCorpus {
    KnowledgeBase kb;
    Corpus train;
    Corpus test;        // clean held-out dialogues
    Corpus noisy_test;  // the same dialogues after error injection and entity name augmentation
    Lexicon lexicon;
};

// 3 domains x (9 entities + 1 domain pseudo-entity) x 5 documents.
KnowledgeBase mini_knowledge_base();
Corpus mini_dialogues(const KnowledgeBase& kb, const MiniCorpusConfig& config);
Lexicon corpus_lexicon(const Corpus& corpus, const KnowledgeBase& kb);

// Per dialogue (seeded by id): error injection on every user turn, then
// entity name augmentation of the first ground-truth entity.
Corpus noisy_copy(const Corpus& corpus, const KnowledgeBase& kb, const PhoneticIndex& index,
                  const AugmentConfig& config, std::uint64_t seed);

MiniCorpus make_mini_corpus(const MiniCorpusConfig& config);

// Confusion table reproducing the speech round trip example rows.
std::string fake_confusion_table();

// Writes train/test/noisy_test logs and labels, knowledge.json, lexicon.txt,
// confusion.tsv and a config.txt with toy-sized settings into `dir`.
void write_workspace(const std::filesystem::path& dir, std::uint64_t seed, std::size_t dialogues);

}  // namespace kgd::synthetic
