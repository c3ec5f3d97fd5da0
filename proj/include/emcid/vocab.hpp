#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "emcid/errors.hpp"

namespace emcid {

// Closed toy vocabulary. Reserved ids 0..2 are [BOS], [EOS], [PAD]; file
// tokens follow in line order. Prompts are whitespace-delimited; every word
// must be present (no subword fallback).
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kReserved = 3;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return int(words_.size()) + kReserved; }

  int id_of(const std::string& word) const;
  const std::string& word_of(int id) const;
  bool contains(const std::string& word) const { return index_.count(word) > 0; }

  // [BOS] + word ids + [EOS]
  std::vector<int> tokenize(const std::string& prompt) const;
  // Words only, single-space joined; inverse of tokenize up to whitespace
  // normalization.
  std::string detokenize(const std::vector<int>& ids) const;

  // Raw word ids without specials (for subject spans).
  std::vector<int> word_ids(const std::string& text) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_words(const std::string& text);

// Index of the final token of the last occurrence of `subject_ids` inside
// `prompt_ids`, or -1 when the subject does not occur. Prompts carry
// [BOS]/[EOS]; subjects never do, so matches stay within the word region.
int last_subject_position(const std::vector<int>& prompt_ids, const std::vector<int>& subject_ids);

}  // namespace emcid
