#pragma once

#include <string>
#include <vector>

#include "emcid/matrix.hpp"
#include "emcid/render.hpp"
#include "emcid/vocab.hpp"

namespace emcid {

enum class PromptTier { Template, Paraphrase };

struct ConceptSpec {
  std::string id;
  std::string name;                    // canonical, also the edit subject
  std::vector<std::string> aliases;
  std::string shape;
  std::string color;
  std::vector<std::string> templates;
  std::vector<std::string> paraphrases;
  // Concept whose images the alias is bound to during pre-training. Equal
  // to `id` for well-understood aliases; different for the engineered
  // misunderstood ones that the rectification task repairs.
  std::string alias_bound_to;
};

// Bare subject word with a biased attribute mix in the training corpus;
// the debias task rebalances it.
struct BareSubjectSpec {
  std::string subject;
  std::vector<std::string> prompts;
  std::vector<std::string> attribute_ids;
  std::vector<double> train_ratios;
};

class ConceptRegistry {
 public:
  std::vector<ConceptSpec> concepts;
  std::vector<BareSubjectSpec> bare_subjects;
  std::string neutral_concept;

  static ConceptRegistry load(const std::string& path);
  void save(const std::string& path) const;

  int index_of(const std::string& id) const;      // throws UnknownConcept
  const ConceptSpec& get(const std::string& id) const;
  bool has(const std::string& id) const;

  const std::vector<std::string>& prompts(const std::string& id, PromptTier tier) const;
  // Tier prompts with the canonical name replaced by the alias.
  std::vector<std::string> alias_prompts(const std::string& id, int alias_index,
                                         PromptTier tier) const;

  Matrix prototype(const std::string& id) const;

  // Checks id uniqueness, alias != name, and that every prompt references
  // exactly one registered concept name and tokenizes under vocab.
  void validate(const Vocabulary& vocab) const;

 private:
  bool alias_bound_valid(const ConceptSpec& c) const;
};

std::string replace_all(const std::string& text, const std::string& from, const std::string& to);

}  // namespace emcid
