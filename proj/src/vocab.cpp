#include "emcid/vocab.hpp"

#include <fstream>
#include <sstream>

namespace emcid {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty()) throw FormatError("vocabulary: empty token at line " + std::to_string(i + 1));
    auto [it, inserted] = index_.emplace(words_[i], int(i) + kReserved);
    (void)it;
    if (!inserted) throw FormatError("vocabulary: duplicate token '" + words_[i] + "'");
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (const auto& w : words_) out << w << "\n";
}

int Vocabulary::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw UnknownToken("'" + word + "' not in vocabulary");
  return it->second;
}

const std::string& Vocabulary::word_of(int id) const {
  static const std::string kSpecials[] = {"[BOS]", "[EOS]", "[PAD]"};
  if (id >= 0 && id < kReserved) return kSpecials[id];
  const int i = id - kReserved;
  if (i < 0 || i >= int(words_.size()))
    throw UnknownToken("token id " + std::to_string(id) + " out of range");
  return words_[i];
}

std::vector<int> Vocabulary::tokenize(const std::string& prompt) const {
  std::vector<int> ids;
  ids.push_back(kBos);
  for (const auto& w : split_words(prompt)) ids.push_back(id_of(w));
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < kReserved) continue;
    if (!out.empty()) out += ' ';
    out += word_of(id);
  }
  return out;
}

std::vector<int> Vocabulary::word_ids(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id_of(w));
  return ids;
}

int last_subject_position(const std::vector<int>& prompt_ids, const std::vector<int>& subject_ids) {
  if (subject_ids.empty() || subject_ids.size() > prompt_ids.size()) return -1;
  int found = -1;
  for (size_t start = 0; start + subject_ids.size() <= prompt_ids.size(); ++start) {
    bool match = true;
    for (size_t k = 0; k < subject_ids.size(); ++k) {
      if (prompt_ids[start + k] != subject_ids[k]) {
        match = false;
        break;
      }
    }
    if (match) found = int(start + subject_ids.size() - 1);
  }
  return found;
}

}  // namespace emcid
