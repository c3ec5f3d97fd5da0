#include "emcid/registry.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace emcid {

using nlohmann::json;

ConceptRegistry ConceptRegistry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open registry file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw FormatError("registry parse error in " + path + ": " + e.what());
  }
  ConceptRegistry reg;
  for (const auto& c : doc.at("concepts")) {
    ConceptSpec spec;
    spec.id = c.at("id").get<std::string>();
    spec.name = c.at("name").get<std::string>();
    spec.aliases = c.at("aliases").get<std::vector<std::string>>();
    spec.shape = c.at("shape").get<std::string>();
    spec.color = c.at("color").get<std::string>();
    spec.templates = c.at("templates").get<std::vector<std::string>>();
    spec.paraphrases = c.at("paraphrases").get<std::vector<std::string>>();
    spec.alias_bound_to = c.value("alias_bound_to", spec.id);
    reg.concepts.push_back(std::move(spec));
  }
  reg.neutral_concept = doc.value("neutral_concept", std::string());
  if (doc.contains("bare_subjects")) {
    for (const auto& b : doc.at("bare_subjects")) {
      BareSubjectSpec spec;
      spec.subject = b.at("subject").get<std::string>();
      spec.prompts = b.at("prompts").get<std::vector<std::string>>();
      spec.attribute_ids = b.at("attributes").get<std::vector<std::string>>();
      spec.train_ratios = b.at("train_ratios").get<std::vector<double>>();
      reg.bare_subjects.push_back(std::move(spec));
    }
  }
  return reg;
}

void ConceptRegistry::save(const std::string& path) const {
  json doc;
  doc["concepts"] = json::array();
  for (const auto& c : concepts) {
    json jc;
    jc["id"] = c.id;
    jc["name"] = c.name;
    jc["aliases"] = c.aliases;
    jc["shape"] = c.shape;
    jc["color"] = c.color;
    jc["templates"] = c.templates;
    jc["paraphrases"] = c.paraphrases;
    jc["alias_bound_to"] = c.alias_bound_to;
    doc["concepts"].push_back(jc);
  }
  doc["neutral_concept"] = neutral_concept;
  doc["bare_subjects"] = json::array();
  for (const auto& b : bare_subjects) {
    json jb;
    jb["subject"] = b.subject;
    jb["prompts"] = b.prompts;
    jb["attributes"] = b.attribute_ids;
    jb["train_ratios"] = b.train_ratios;
    doc["bare_subjects"].push_back(jb);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write registry file: " + path);
  out << doc.dump(2) << "\n";
}

int ConceptRegistry::index_of(const std::string& id) const {
  for (size_t i = 0; i < concepts.size(); ++i)
    if (concepts[i].id == id) return int(i);
  throw UnknownConcept("'" + id + "' is not a registered concept");
}

const ConceptSpec& ConceptRegistry::get(const std::string& id) const {
  return concepts[index_of(id)];
}

bool ConceptRegistry::has(const std::string& id) const {
  for (const auto& c : concepts)
    if (c.id == id) return true;
  return false;
}

const std::vector<std::string>& ConceptRegistry::prompts(const std::string& id,
                                                         PromptTier tier) const {
  const ConceptSpec& c = get(id);
  const auto& list = tier == PromptTier::Template ? c.templates : c.paraphrases;
  if (list.empty())
    throw EmptyPromptTier("concept '" + id + "' has no prompts in the requested tier");
  return list;
}

std::string replace_all(const std::string& text, const std::string& from, const std::string& to) {
  std::string out;
  size_t pos = 0;
  for (;;) {
    const size_t hit = text.find(from, pos);
    if (hit == std::string::npos) {
      out += text.substr(pos);
      return out;
    }
    out += text.substr(pos, hit - pos);
    out += to;
    pos = hit + from.size();
  }
}

std::vector<std::string> ConceptRegistry::alias_prompts(const std::string& id, int alias_index,
                                                        PromptTier tier) const {
  const ConceptSpec& c = get(id);
  if (alias_index < 0 || alias_index >= int(c.aliases.size()))
    throw UnknownConcept("concept '" + id + "' has no alias #" + std::to_string(alias_index));
  std::vector<std::string> out;
  for (const auto& p : prompts(id, tier)) out.push_back(replace_all(p, c.name, c.aliases[alias_index]));
  return out;
}

Matrix ConceptRegistry::prototype(const std::string& id) const {
  const ConceptSpec& c = get(id);
  return render_prototype(shape_from_name(c.shape), color_from_name(c.color));
}

void ConceptRegistry::validate(const Vocabulary& vocab) const {
  std::set<std::string> ids;
  for (const auto& c : concepts) {
    if (!ids.insert(c.id).second) throw FormatError("duplicate concept id '" + c.id + "'");
    for (const auto& a : c.aliases)
      if (a == c.name) throw FormatError("alias equals canonical name for '" + c.id + "'");
    if (!alias_bound_valid(c)) throw UnknownConcept("alias_bound_to '" + c.alias_bound_to + "'");
    shape_from_name(c.shape);
    color_from_name(c.color);
    for (PromptTier tier : {PromptTier::Template, PromptTier::Paraphrase}) {
      for (const auto& p : prompts(c.id, tier)) {
        vocab.tokenize(p);  // throws UnknownToken
        int refs = 0;
        for (const auto& other : concepts)
          if ((" " + p + " ").find(" " + other.name + " ") != std::string::npos) ++refs;
        if (refs != 1)
          throw FormatError("prompt '" + p + "' references " + std::to_string(refs) +
                            " registered concepts, expected exactly 1");
      }
    }
  }
  if (!neutral_concept.empty()) index_of(neutral_concept);
  for (const auto& b : bare_subjects) {
    if (b.attribute_ids.size() < 2) throw FormatError("bare subject needs >= 2 attributes");
    if (b.attribute_ids.size() != b.train_ratios.size())
      throw FormatError("bare subject ratios/attributes length mismatch");
    double sum = 0.0;
    for (double r : b.train_ratios) sum += r;
    if (std::abs(sum - 1.0) > 1e-9) throw FormatError("bare subject ratios must sum to 1");
    for (const auto& a : b.attribute_ids) index_of(a);
    for (const auto& p : b.prompts) vocab.tokenize(p);
  }
}

bool ConceptRegistry::alias_bound_valid(const ConceptSpec& c) const {
  if (c.alias_bound_to.empty() || c.alias_bound_to == c.id) return true;
  for (const auto& other : concepts)
    if (other.id == c.alias_bound_to) return true;
  return false;
}

}  // namespace emcid
