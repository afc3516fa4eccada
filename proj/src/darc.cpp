#include "tracekit/darc.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tracekit/hash.hpp"

namespace tracekit {

using nlohmann::json;

std::string FactRecord::key() const {
  if (known_id && !known_id->empty()) return *known_id;
  return sha256_hex(full_fact + "\x1f" + subject + "\x1f" + prompt).substr(0, 16);
}

namespace {

// "NONE" markers in the published template mean absent
std::optional<std::string> opt_field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) return std::nullopt;
  std::string v = it->get<std::string>();
  if (v == "NONE" || v.empty()) return std::nullopt;
  return v;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool in_ws = true;  // trims leading whitespace
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_ws = true;
    } else {
      if (in_ws && !out.empty()) out += ' ';
      out += c;
      in_ws = false;
    }
  }
  return out;
}

size_t word_count(std::string_view s) {
  size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    bool ws = std::isspace(static_cast<unsigned char>(c));
    if (!ws && !in_word) ++n;
    in_word = !ws;
  }
  return n;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '\''; }

// case-insensitive whole-word substring match
bool contains_word(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  std::string h = lower(haystack), n = lower(needle);
  size_t pos = 0;
  while ((pos = h.find(n, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || !word_char(h[pos - 1]);
    size_t after = pos + n.size();
    bool right_ok = after == h.size() || !word_char(h[after]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

}  // namespace

ParseResult parse_facts(std::istream& in) {
  ParseResult out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      out.errors.push_back({lineno, "", "not a JSON object"});
      continue;
    }
    FactRecord rec;
    bool ok = true;
    auto need = [&](const char* name, std::string& dst) {
      auto it = j.find(name);
      if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
        out.errors.push_back({lineno, name, "missing or empty"});
        ok = false;
        return;
      }
      dst = it->get<std::string>();
    };
    need("full_fact", rec.full_fact);
    need("subject", rec.subject);
    need("attribute", rec.attribute);
    need("prediction", rec.prediction);
    need("prompt", rec.prompt);
    need("group", rec.group);
    rec.known_id = opt_field(j, "known_id");
    rec.relation_id = opt_field(j, "relation_id");
    rec.template_ = opt_field(j, "template");
    if (ok) out.records.push_back(std::move(rec));
  }
  return out;
}

ParseResult parse_facts_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw error("cannot open '" + path + "'");
  return parse_facts(f);
}

std::string serialize_fact(const FactRecord& rec) {
  json j;
  j["known_id"] = rec.known_id ? json(*rec.known_id) : json(nullptr);
  j["full_fact"] = rec.full_fact;
  j["subject"] = rec.subject;
  j["attribute"] = rec.attribute;
  j["prediction"] = rec.prediction;
  j["prompt"] = rec.prompt;
  j["group"] = rec.group;
  j["relation_id"] = rec.relation_id ? json(*rec.relation_id) : json(nullptr);
  j["template"] = rec.template_ ? json(*rec.template_) : json(nullptr);
  return j.dump();
}

void write_facts_file(const std::string& path, const std::vector<FactRecord>& facts) {
  std::ofstream f(path);
  if (!f) throw error("cannot write '" + path + "'");
  for (const FactRecord& rec : facts) f << serialize_fact(rec) << "\n";
}

const char* issue_name(IssueKind k) {
  switch (k) {
    case IssueKind::EmptyField: return "EmptyField";
    case IssueKind::SubjectNotInPrompt: return "SubjectNotInPrompt";
    case IssueKind::PromptNotPrefix: return "PromptNotPrefix";
    case IssueKind::WordLimitExceeded: return "WordLimitExceeded";
  }
  return "?";
}

std::vector<Issue> validate_fact(const FactRecord& rec) {
  std::vector<Issue> issues;
  auto check_empty = [&](const std::string& v, const char* name) {
    if (v.empty()) issues.push_back({IssueKind::EmptyField, name});
  };
  check_empty(rec.full_fact, "full_fact");
  check_empty(rec.subject, "subject");
  check_empty(rec.attribute, "attribute");
  check_empty(rec.prediction, "prediction");
  check_empty(rec.prompt, "prompt");
  check_empty(rec.group, "group");
  if (!rec.subject.empty() && rec.prompt.find(rec.subject) == std::string::npos)
    issues.push_back({IssueKind::SubjectNotInPrompt, rec.subject});
  if (!rec.prompt.empty()) {
    std::string ff = collapse_ws(rec.full_fact), pp = collapse_ws(rec.prompt);
    if (ff.compare(0, pp.size(), pp) != 0)
      issues.push_back({IssueKind::PromptNotPrefix, "prompt is not a prefix of full_fact"});
  }
  size_t words = word_count(rec.full_fact);
  if (words > 15)
    issues.push_back({IssueKind::WordLimitExceeded,
                      std::to_string(words) + " words exceed the soft limit of 15"});
  return issues;
}

CategoryManifest CategoryManifest::from_json_text(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw error("manifest is not a JSON object");
  CategoryManifest m;
  if (!j.contains("category") || !j["category"].is_string())
    throw error("manifest missing 'category'");
  m.category = j["category"].get<std::string>();
  std::string rel = j.value("relation", "");
  if (rel == "Taxonomic")
    m.relation = RelationKind::Taxonomic;
  else if (rel == "Meronomic")
    m.relation = RelationKind::Meronomic;
  else
    throw error("manifest relation must be Taxonomic or Meronomic");
  if (!j.contains("subcategories") || !j["subcategories"].is_array())
    throw error("manifest missing 'subcategories'");
  for (const auto& s : j["subcategories"]) {
    SubcategorySpec spec;
    spec.name = s.at("name").get<std::string>();
    if (s.contains("exclusions"))
      for (const auto& e : s["exclusions"]) spec.exclusions.push_back(e.get<std::string>());
    m.subcategories.push_back(std::move(spec));
  }
  if (m.subcategories.empty()) throw error("manifest has no subcategories");
  return m;
}

CategoryManifest CategoryManifest::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

std::vector<ExclusivityViolation> check_mutual_exclusivity(
    const std::vector<FactRecord>& facts, const CategoryManifest& manifest) {
  std::vector<ExclusivityViolation> out;
  for (size_t level = 0; level < manifest.subcategories.size(); ++level) {
    const SubcategorySpec& spec = manifest.subcategories[level];
    size_t index_in_sub = 0;
    for (const FactRecord& rec : facts) {
      if (rec.group != spec.name) continue;
      for (const std::string& term : spec.exclusions)
        if (contains_word(rec.subject, term)) {
          // locate the level that owns the term, for the report
          std::string owner;
          for (size_t prior = 0; prior < level; ++prior)
            if (manifest.subcategories[prior].name == term ||
                contains_word(term, manifest.subcategories[prior].name))
              owner = manifest.subcategories[prior].name;
          out.push_back({spec.name, index_in_sub, rec.subject, term, owner});
        }
      ++index_in_sub;
    }
  }
  return out;
}

std::vector<CategorySummary> summarize(const std::vector<FactRecord>& facts,
                                       const std::vector<CategoryManifest>& manifests) {
  std::vector<CategorySummary> out;
  for (const CategoryManifest& m : manifests) {
    CategorySummary cs;
    cs.category = m.category;
    cs.subcategory_count = m.subcategories.size();
    for (const SubcategorySpec& spec : m.subcategories) {
      SubcategorySummary ss;
      ss.name = spec.name;
      for (const FactRecord& rec : facts)
        if (rec.group == spec.name) ++ss.facts;
      cs.total_facts += ss.facts;
      cs.subcategories.push_back(std::move(ss));
    }
    out.push_back(std::move(cs));
  }
  return out;
}

}  // namespace tracekit
