#include "seat/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "seat/errors.hpp"

namespace seat {

static const char* kSpecials[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

Vocab Vocab::from_words(const std::vector<std::string>& words) {
    Vocab v;
    v.tokens.reserve(words.size() + 4);
    for (const char* s : kSpecials) {
        v.tokens.emplace_back(s);
    }
    std::vector<std::string> sorted = words;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (auto& w : sorted) {
        if (w.empty()) {
            continue;
        }
        v.tokens.push_back(w);
    }
    for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) {
        v.ids.emplace(v.tokens[static_cast<std::size_t>(i)], i);
    }
    if (static_cast<int>(v.ids.size()) != v.size()) {
        throw ValidationError("vocabulary words collide with special tokens");
    }
    return v;
}

int Vocab::id_of(const std::string& word) const {
    auto it = ids.find(word);
    return it == ids.end() ? unk_id : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) {
        throw ValidationError("token id out of range: " + std::to_string(id));
    }
    return tokens[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                words.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        words.push_back(std::move(cur));
    }
    return words;
}

std::string normalize_text(std::string_view text) {
    std::string out;
    for (const auto& w : split_words(text)) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += w;
    }
    return out;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
    std::vector<int> out;
    for (const auto& w : split_words(text)) {
        out.push_back(vocab.id_of(w));
    }
    return out;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += vocab.token_of(id);
    }
    return out;
}

}  // namespace seat
