#pragma once

// Word-level vocabulary and tokenizer. The question/answer text in this
// project is closed-vocabulary template output, so there is no need for
// subword machinery: lowercase, split punctuation off, split on whitespace.

#include <cctype>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sceneqa/core/error.hpp"

namespace sceneqa {

inline bool is_punct_token_char(char c) {
    switch (c) {
        case '.':
        case ',':
        case '?':
        case '!':
        case ';':
        case ':':
        case '(':
        case ')':
        case '\'':
        case '"':
            return true;
        default:
            return false;
    }
}

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char raw : text) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_punct_token_char(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

// Inverse of tokenize for canonical text: space-separated words, punctuation
// glued to the preceding token.
inline std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        bool punct = t.size() == 1 && is_punct_token_char(t[0]);
        if (!out.empty() && !punct) out.push_back(' ');
        out += t;
    }
    return out;
}

class Vocabulary {
  public:
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int UNK = 3;

    Vocabulary() {
        for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
    }

    int add(const std::string& token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        index_.emplace(token, id);
        return id;
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? UNK : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    const std::string& token(int id) const {
        if (id < 0 || id >= static_cast<int>(tokens_.size()))
            throw IndexError("vocabulary id " + std::to_string(id) + " out of range (size " +
                             std::to_string(tokens_.size()) + ")");
        return tokens_[static_cast<std::size_t>(id)];
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& t : tokenize(text)) ids.push_back(id(t));
        return ids;
    }

    // Drops structural tokens; <unk> stays visible on purpose.
    std::string decode(const std::vector<int>& ids) const {
        std::vector<std::string> toks;
        for (int i : ids)
            if (i != PAD && i != BOS && i != EOS) toks.push_back(token(i));
        return detokenize(toks);
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw DataError("vocab: cannot write " + path);
        for (const auto& t : tokens_) f << t << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw DataError("vocab: cannot read " + path);
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        std::string line;
        while (std::getline(f, line)) v.add(line);
        const char* reserved[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
        for (int i = 0; i < 4; ++i)
            if (v.size() <= i || v.token(i) != reserved[i])
                throw DataError("vocab: " + path + " does not start with the reserved tokens");
        return v;
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace sceneqa
