// Word-level tokenizer with a fixed, corpus-derived vocabulary.
//
// Text splits on whitespace; punctuation characters become their own tokens.
// The four option letters "A".."D" are reserved single tokens with the fixed
// ids 0..3, so an option letter is always a single token by construction.
#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "qrn/util.hpp"

namespace qrn {

inline bool is_punct_token_char(char c) {
  static const std::string kPunct = ".,?!:;()[]'\"";
  return kPunct.find(c) != std::string::npos;
}

// Splits text into word and punctuation tokens. Case is preserved.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else if (is_punct_token_char(c)) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      out.emplace_back(1, c);
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

class Tokenizer {
 public:
  static constexpr int kOptionLetterIds[4] = {0, 1, 2, 3};

  Tokenizer() = default;

  // Vocabulary = reserved letters, then all other words sorted
  // lexicographically, so ids are a pure function of the word set.
  static Tokenizer from_words(const std::vector<std::string>& words) {
    Tokenizer t;
    t.id_to_word_ = {"A", "B", "C", "D"};
    std::vector<std::string> rest;
    for (const auto& w : words) {
      if (w == "A" || w == "B" || w == "C" || w == "D") continue;
      rest.push_back(w);
    }
    std::sort(rest.begin(), rest.end());
    rest.erase(std::unique(rest.begin(), rest.end()), rest.end());
    t.id_to_word_.insert(t.id_to_word_.end(), rest.begin(), rest.end());
    t.rebuild_index();
    return t;
  }

  static Tokenizer from_vocab(std::vector<std::string> vocab) {
    require(vocab.size() >= 4, "vocabulary must contain the four option letters");
    for (int i = 0; i < 4; ++i)
      require(vocab[static_cast<std::size_t>(i)] == std::string(1, char('A' + i)),
              "vocabulary must start with reserved letters A..D");
    Tokenizer t;
    t.id_to_word_ = std::move(vocab);
    t.rebuild_index();
    return t;
  }

  int size() const { return static_cast<int>(id_to_word_.size()); }

  const std::vector<std::string>& vocab() const { return id_to_word_; }

  bool contains(const std::string& w) const { return word_to_id_.count(w) > 0; }

  int id_of(const std::string& w) const {
    auto it = word_to_id_.find(w);
    require(it != word_to_id_.end(), "token not in vocabulary: '", w, "'");
    return it->second;
  }

  const std::string& word_of(int id) const {
    require(id >= 0 && id < size(), "token id out of range: ", id);
    return id_to_word_[static_cast<std::size_t>(id)];
  }

  static int option_letter_id(int option_pos) {
    require(option_pos >= 0 && option_pos < 4, "option position out of range");
    return kOptionLetterIds[option_pos];
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id_of(w));
    return ids;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : id_to_word_) {
      h = fnv1a64(w.data(), w.size(), h);
      h = fnv1a64("\n", 1, h);
    }
    return h;
  }

 private:
  void rebuild_index() {
    word_to_id_.clear();
    for (int i = 0; i < size(); ++i) {
      const auto& w = id_to_word_[static_cast<std::size_t>(i)];
      require(word_to_id_.emplace(w, i).second, "duplicate vocabulary word: ", w);
    }
  }

  std::vector<std::string> id_to_word_;
  std::map<std::string, int> word_to_id_;
};

}  // namespace qrn
