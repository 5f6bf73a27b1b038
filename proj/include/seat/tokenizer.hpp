#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace seat {

// Whitespace-split word-level tokenizer over the closed synthetic vocabulary.
// Token ids 0..3 are reserved for the special tokens pad/bos/eos/unk.
struct Vocab {
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int unk_id = 3;

    std::vector<std::string> tokens;         // id -> token string, specials first
    std::unordered_map<std::string, int> ids;

    // Builds a vocabulary from a word list: specials first, then the unique
    // words sorted lexicographically (deterministic regardless of input order).
    static Vocab from_words(const std::vector<std::string>& words);

    int size() const { return static_cast<int>(tokens.size()); }
    bool contains(const std::string& word) const { return ids.count(word) != 0; }
    int id_of(const std::string& word) const;       // unk_id if absent
    const std::string& token_of(int id) const;      // throws on out-of-range id
};

// Splits on ASCII whitespace; never produces empty words.
std::vector<std::string> split_words(std::string_view text);

// Canonical single-space form of a string.
std::string normalize_text(std::string_view text);

// Total function: unknown words map to unk_id, "" maps to the empty sequence.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);

// Joins token strings with single spaces.
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

}  // namespace seat
