#include "selfplay/ontology.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "selfplay/rng.hpp"

namespace selfplay {

using nlohmann::json;

SlotKind parse_slot_kind(std::string_view s) {
  if (s == "informable") return SlotKind::kInformable;
  if (s == "requestable") return SlotKind::kRequestable;
  if (s == "both") return SlotKind::kBoth;
  throw ParseError("unknown slot kind '" + std::string(s) + "'");
}

std::string_view to_string(SlotKind kind) {
  switch (kind) {
    case SlotKind::kInformable: return "informable";
    case SlotKind::kRequestable: return "requestable";
    case SlotKind::kBoth: return "both";
  }
  return "informable";
}

std::string slot_key_string(const SlotKey& key) { return key.first + "-" + key.second; }

std::optional<SlotKey> parse_slot_key(std::string_view s) {
  const auto dash = s.find('-');
  if (dash == std::string_view::npos || dash == 0 || dash + 1 >= s.size()) return std::nullopt;
  return SlotKey{std::string(s.substr(0, dash)), std::string(s.substr(dash + 1))};
}

// ---------------------------------------------------------------- Ontology

Ontology::Ontology(std::map<std::string, std::vector<SlotSpec>> domains) {
  if (domains.empty()) throw ValidationError("ontology: no domains");
  for (auto& [name, slots] : domains) {
    if (name.empty() || name.find('-') != std::string::npos || name.find('_') != std::string::npos) {
      throw ValidationError("ontology: invalid domain name '" + name + "'");
    }
    std::set<std::string> seen;
    for (const auto& slot : slots) {
      if (slot.name.empty() || slot.name.find('-') != std::string::npos) {
        throw ValidationError("ontology: invalid slot name '" + slot.name + "' in domain '" + name + "'");
      }
      if (!seen.insert(slot.name).second) {
        throw ValidationError("ontology: duplicate slot '" + slot.name + "' in domain '" + name + "'");
      }
      if (slot.values.empty()) {
        throw ValidationError("ontology: slot '" + name + "-" + slot.name + "' has an empty value list");
      }
    }
    if (slots.empty()) throw ValidationError("ontology: domain '" + name + "' has no slots");
    domain_names_.push_back(name);
    for (const auto& slot : slots) index_.emplace_back(name, slot.name);
  }
  domains_.insert(domains.begin(), domains.end());
  std::sort(index_.begin(), index_.end());
  for (std::size_t i = 0; i < index_.size(); ++i) position_[index_[i]] = i;
}

bool Ontology::has_domain(std::string_view domain) const { return domains_.find(domain) != domains_.end(); }

const std::vector<SlotSpec>& Ontology::slots(std::string_view domain) const {
  auto it = domains_.find(domain);
  if (it == domains_.end()) throw ConstraintError("unknown domain '" + std::string(domain) + "'");
  return it->second;
}

const SlotSpec* Ontology::find_slot(std::string_view domain, std::string_view slot) const {
  auto it = domains_.find(domain);
  if (it == domains_.end()) return nullptr;
  for (const auto& s : it->second)
    if (s.name == slot) return &s;
  return nullptr;
}

std::optional<std::size_t> Ontology::index_of(std::string_view domain, std::string_view slot) const {
  auto it = position_.find(SlotKey{std::string(domain), std::string(slot)});
  if (it == position_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Ontology::informable_slots(std::string_view domain) const {
  std::vector<std::string> out;
  for (const auto& s : slots(domain))
    if (s.informable()) out.push_back(s.name);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> Ontology::requestable_slots(std::string_view domain) const {
  std::vector<std::string> out;
  for (const auto& s : slots(domain))
    if (s.requestable()) out.push_back(s.name);
  std::sort(out.begin(), out.end());
  return out;
}

const std::string* Entity::attribute(std::string_view slot) const {
  auto it = attributes.find(std::string(slot));
  return it == attributes.end() ? nullptr : &it->second;
}

const Entity* KnowledgeBase::find_entity(std::string_view id) const {
  for (const auto& e : entities)
    if (e.id == id) return &e;
  return nullptr;
}

// ---------------------------------------------------------------- parsing

Ontology parse_ontology(const json& doc) {
  if (!doc.is_object() || !doc.contains("domains") || !doc["domains"].is_object()) {
    throw ParseError("ontology: expected an object with a \"domains\" object");
  }
  std::map<std::string, std::vector<SlotSpec>> domains;
  try {
    for (const auto& [name, body] : doc["domains"].items()) {
      std::vector<SlotSpec> slots;
      for (const auto& s : body.at("slots")) {
        SlotSpec spec;
        spec.name = s.at("name").get<std::string>();
        spec.kind = parse_slot_kind(s.at("kind").get<std::string>());
        spec.values = s.at("values").get<std::vector<std::string>>();
        slots.push_back(std::move(spec));
      }
      domains[name] = std::move(slots);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("ontology: ") + e.what());
  }
  return Ontology(std::move(domains));
}

std::vector<Entity> parse_entities(const json& doc, const Ontology& ontology) {
  std::vector<Entity> out;
  if (!doc.contains("entities")) return out;
  std::set<std::string> ids;
  try {
    for (const auto& e : doc.at("entities")) {
      Entity entity;
      entity.id = e.at("id").get<std::string>();
      entity.domain = e.at("domain").get<std::string>();
      entity.attributes = e.at("attributes").get<std::map<std::string, std::string>>();
      out.push_back(std::move(entity));
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("entities: ") + ex.what());
  }
  for (const auto& e : out) {
    if (!ids.insert(e.id).second) throw ValidationError("entity: duplicate id '" + e.id + "'");
    if (!ontology.has_domain(e.domain)) {
      throw ValidationError("entity '" + e.id + "': unknown domain '" + e.domain + "'");
    }
    for (const auto& slot : ontology.slots(e.domain)) {
      const std::string* v = e.attribute(slot.name);
      if (!v) throw ValidationError("entity '" + e.id + "': missing attribute '" + slot.name + "'");
      if (std::find(slot.values.begin(), slot.values.end(), *v) == slot.values.end()) {
        throw ValidationError("entity '" + e.id + "': value '" + *v + "' not in ontology for slot '" + slot.name +
                              "'");
      }
    }
    for (const auto& [slot, value] : e.attributes) {
      if (!ontology.find_slot(e.domain, slot)) {
        throw ValidationError("entity '" + e.id + "': unknown slot '" + slot + "'");
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Entity& a, const Entity& b) { return a.id < b.id; });
  return out;
}

KnowledgeBase parse_knowledge_base(const json& doc) {
  KnowledgeBase kb;
  kb.ontology = parse_ontology(doc);
  kb.entities = parse_entities(doc, kb.ontology);
  return kb;
}

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

}  // namespace

Ontology load_ontology(const std::string& path) { return parse_ontology(read_json_file(path)); }

KnowledgeBase load_knowledge_base(const std::string& path) { return parse_knowledge_base(read_json_file(path)); }

// ---------------------------------------------------------------- query

MatchBucket bucketize(std::size_t count) {
  if (count == 0) return {1, 0, 0};
  if (count == 1) return {0, 1, 0};
  return {0, 0, 1};
}

MatchResult query(const Ontology& ontology, std::span<const Entity> db, std::string_view domain,
                  const std::map<std::string, std::string>& constraints) {
  if (!ontology.has_domain(domain)) throw ConstraintError("query: unknown domain '" + std::string(domain) + "'");
  for (const auto& [slot, value] : constraints) {
    if (!ontology.find_slot(domain, slot)) {
      throw ConstraintError("query: unknown slot '" + slot + "' in domain '" + std::string(domain) + "'");
    }
  }
  MatchResult result;
  for (const auto& e : db) {
    if (e.domain != domain) continue;
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      if (value == kDontCare) continue;
      const std::string* v = e.attribute(slot);
      if (!v || *v != value) {
        ok = false;
        break;
      }
    }
    if (ok) result.entities.push_back(e.id);
  }
  std::sort(result.entities.begin(), result.entities.end());
  result.count = result.entities.size();
  result.bucket = bucketize(result.count);
  return result;
}

// ---------------------------------------------------------------- (de)lexicalisation

ValueSource value_source(const Entity& entity) {
  ValueSource src;
  for (const auto& [slot, value] : entity.attributes) src[{entity.domain, slot}] = value;
  return src;
}

std::string placeholder(std::string_view domain, std::string_view slot) {
  return "[value_" + std::string(domain) + "_" + std::string(slot) + "]";
}

bool is_placeholder(std::string_view token) {
  return token.size() > 8 && token.starts_with("[value_") && token.ends_with("]");
}

std::optional<SlotKey> parse_placeholder(const Ontology& ontology, std::string_view token) {
  if (!is_placeholder(token)) return std::nullopt;
  const std::string_view body = token.substr(7, token.size() - 8);
  for (const auto& d : ontology.domains()) {
    if (body.size() > d.size() + 1 && body.starts_with(d) && body[d.size()] == '_') {
      return SlotKey{d, std::string(body.substr(d.size() + 1))};
    }
  }
  // Unknown domain: split at the first underscore so the caller can report it.
  const auto us = body.find('_');
  if (us == std::string_view::npos) return SlotKey{std::string(body), ""};
  return SlotKey{std::string(body.substr(0, us)), std::string(body.substr(us + 1))};
}

Tokens lexicalize(const Tokens& delex, const ValueSource& source, const Ontology& ontology, std::uint64_t seed) {
  Rng rng(seed);
  Tokens out;
  out.reserve(delex.size());
  for (const auto& tok : delex) {
    auto key = parse_placeholder(ontology, tok);
    if (!key) {
      out.push_back(tok);
      continue;
    }
    const SlotSpec* spec = ontology.find_slot(key->first, key->second);
    if (!spec) throw LexicalizationError("lexicalize: placeholder '" + tok + "' names no ontology slot");
    std::string value;
    if (auto it = source.find(*key); it != source.end()) {
      value = it->second;
    } else {
      value = spec->values[rng.index(spec->values.size())];
    }
    if (value == kDontCare) {
      out.emplace_back(kDontCareSurface);
    } else {
      for (auto& part : split_tokens(value)) out.push_back(std::move(part));
    }
  }
  return out;
}

Tokens delexicalize(const Tokens& utterance, const Ontology& ontology) {
  struct Candidate {
    Tokens tokens;
    std::size_t index;
  };
  std::map<std::string, std::vector<Candidate>> by_first;
  for (std::size_t i = 0; i < ontology.size(); ++i) {
    const auto& key = ontology.key_at(i);
    for (const auto& v : ontology.find_slot(key.first, key.second)->values) {
      Tokens vt = split_tokens(v);
      if (!vt.empty()) by_first[vt.front()].push_back({std::move(vt), i});
    }
  }
  Tokens out;
  std::size_t pos = 0;
  while (pos < utterance.size()) {
    const Candidate* best = nullptr;
    auto it = by_first.find(utterance[pos]);
    if (it != by_first.end()) {
      for (const auto& c : it->second) {
        if (pos + c.tokens.size() > utterance.size()) continue;
        if (!std::equal(c.tokens.begin(), c.tokens.end(), utterance.begin() + static_cast<std::ptrdiff_t>(pos)))
          continue;
        if (!best || c.tokens.size() > best->tokens.size() ||
            (c.tokens.size() == best->tokens.size() && c.index < best->index)) {
          best = &c;
        }
      }
    }
    if (best) {
      const auto& key = ontology.key_at(best->index);
      out.push_back(placeholder(key.first, key.second));
      pos += best->tokens.size();
    } else {
      out.push_back(utterance[pos]);
      ++pos;
    }
  }
  return out;
}

Tokens split_tokens(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\n') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace selfplay
