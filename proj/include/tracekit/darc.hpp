#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tracekit/errors.hpp"

namespace tracekit {

struct FactRecord {
  std::optional<std::string> known_id;
  std::string full_fact;
  std::string subject;
  std::string attribute;
  std::string prediction;
  std::string prompt;
  std::string group;
  std::optional<std::string> relation_id;
  std::optional<std::string> template_;

  bool operator==(const FactRecord&) const = default;

  // known_id when present, otherwise a stable digest of the record content
  std::string key() const;
};

struct SchemaError {
  size_t line = 0;  // 1-based
  std::string field;
  std::string message;
};

struct ParseResult {
  std::vector<FactRecord> records;
  std::vector<SchemaError> errors;
};

ParseResult parse_facts(std::istream& in);
ParseResult parse_facts_file(const std::string& path);

std::string serialize_fact(const FactRecord& rec);
void write_facts_file(const std::string& path, const std::vector<FactRecord>& facts);

enum class IssueKind : uint8_t {
  EmptyField,
  SubjectNotInPrompt,
  PromptNotPrefix,
  WordLimitExceeded,  // soft limit, record stays usable
};

struct Issue {
  IssueKind kind;
  std::string detail;
};

const char* issue_name(IssueKind k);

std::vector<Issue> validate_fact(const FactRecord& rec);

enum class RelationKind : uint8_t { Taxonomic, Meronomic };

struct SubcategorySpec {
  std::string name;
  std::vector<std::string> exclusions;
};

struct CategoryManifest {
  std::string category;
  RelationKind relation = RelationKind::Taxonomic;
  std::vector<SubcategorySpec> subcategories;  // order = hierarchy level

  static CategoryManifest from_json_file(const std::string& path);
  static CategoryManifest from_json_text(std::string_view text);
};

struct ExclusivityViolation {
  std::string subcategory;
  size_t fact_index = 0;  // into that subcategory's fact list
  std::string subject;
  std::string term;             // the exclusion term that matched
  std::string term_subcategory;  // the earlier level owning the term
};

// facts grouped by the manifest's subcategory names; unknown groups ignored
std::vector<ExclusivityViolation> check_mutual_exclusivity(
    const std::vector<FactRecord>& facts, const CategoryManifest& manifest);

struct SubcategorySummary {
  std::string name;
  size_t facts = 0;
};

struct CategorySummary {
  std::string category;
  size_t subcategory_count = 0;
  size_t total_facts = 0;
  std::vector<SubcategorySummary> subcategories;
};

std::vector<CategorySummary> summarize(const std::vector<FactRecord>& facts,
                                       const std::vector<CategoryManifest>& manifests);

}  // namespace tracekit
