#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace selfplay {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LexicalizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kDontCare = "dontcare";
inline constexpr std::string_view kNoneValue = "none";
/// Surface form used when a dontcare value is lexicalised.
inline constexpr std::string_view kDontCareSurface = "any";

enum class SlotKind { kInformable, kRequestable, kBoth };

SlotKind parse_slot_kind(std::string_view s);
std::string_view to_string(SlotKind kind);

struct SlotSpec {
  std::string name;
  SlotKind kind = SlotKind::kInformable;
  std::vector<std::string> values;

  bool informable() const { return kind != SlotKind::kRequestable; }
  bool requestable() const { return kind != SlotKind::kInformable; }
};

/// (domain, slot) pair; ordering is lexicographic.
using SlotKey = std::pair<std::string, std::string>;

std::string slot_key_string(const SlotKey& key);  // "hotel-area"
std::optional<SlotKey> parse_slot_key(std::string_view s);

/// The closed world: domains, their slots and categorical values, and a
/// stable index over all (domain, slot) pairs sorted lexicographically.
class Ontology {
 public:
  Ontology() = default;
  Ontology(std::map<std::string, std::vector<SlotSpec>> domains);

  const std::vector<std::string>& domains() const { return domain_names_; }
  bool has_domain(std::string_view domain) const;
  const std::vector<SlotSpec>& slots(std::string_view domain) const;
  const SlotSpec* find_slot(std::string_view domain, std::string_view slot) const;

  /// Number of (domain, slot) pairs.
  std::size_t size() const { return index_.size(); }
  const std::vector<SlotKey>& domain_slot_index() const { return index_; }
  const SlotKey& key_at(std::size_t i) const { return index_.at(i); }
  std::optional<std::size_t> index_of(std::string_view domain, std::string_view slot) const;
  std::optional<std::size_t> index_of(const SlotKey& key) const { return index_of(key.first, key.second); }

  std::vector<std::string> informable_slots(std::string_view domain) const;
  std::vector<std::string> requestable_slots(std::string_view domain) const;

 private:
  std::map<std::string, std::vector<SlotSpec>, std::less<>> domains_;
  std::vector<std::string> domain_names_;
  std::vector<SlotKey> index_;
  std::map<SlotKey, std::size_t> position_;
};

struct Entity {
  std::string id;
  std::string domain;
  std::map<std::string, std::string> attributes;

  const std::string* attribute(std::string_view slot) const;
};

/// One-hot match summary: [no match, unique, ambiguous].
using MatchBucket = std::array<int, 3>;

struct MatchResult {
  std::vector<std::string> entities;  // ids, ascending
  std::size_t count = 0;
  MatchBucket bucket{1, 0, 0};
};

MatchBucket bucketize(std::size_t count);

/// Ontology plus entity records, as stored in one ontology file.
struct KnowledgeBase {
  Ontology ontology;
  std::vector<Entity> entities;

  const Entity* find_entity(std::string_view id) const;
};

Ontology parse_ontology(const nlohmann::json& doc);
std::vector<Entity> parse_entities(const nlohmann::json& doc, const Ontology& ontology);
KnowledgeBase parse_knowledge_base(const nlohmann::json& doc);

/// Throws ParseError for unreadable/malformed files and ValidationError for
/// invariant violations (duplicate slot, empty value list, no domains).
Ontology load_ontology(const std::string& path);
KnowledgeBase load_knowledge_base(const std::string& path);

/// All entities of `domain` matching every non-dontcare constraint, by id.
/// Throws ConstraintError on unknown domain or slot.
MatchResult query(const Ontology& ontology, std::span<const Entity> db, std::string_view domain,
                  const std::map<std::string, std::string>& constraints);

/// Values to substitute into placeholders, keyed by (domain, slot).
using ValueSource = std::map<SlotKey, std::string>;

ValueSource value_source(const Entity& entity);

using Tokens = std::vector<std::string>;

/// "[value_<domain>_<slot>]"
std::string placeholder(std::string_view domain, std::string_view slot);
/// Parses a placeholder token against the ontology's domain names.
std::optional<SlotKey> parse_placeholder(const Ontology& ontology, std::string_view token);
bool is_placeholder(std::string_view token);

/// Replaces placeholders with values from `source`; missing values are
/// drawn uniformly (seeded) from the ontology's value list for the slot.
/// Throws LexicalizationError when a placeholder names an unknown slot.
Tokens lexicalize(const Tokens& delex, const ValueSource& source, const Ontology& ontology, std::uint64_t seed);

/// Replaces every maximal token span equal to an ontology value with its
/// placeholder. Longest span wins; ties go to the lowest domain-slot index.
Tokens delexicalize(const Tokens& utterance, const Ontology& ontology);

Tokens split_tokens(std::string_view text);
std::string join_tokens(const Tokens& tokens);

}  // namespace selfplay
