#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "tracekit/darc.hpp"

using namespace tracekit;

namespace {

FactRecord bronchi_record() {
  FactRecord r;
  r.full_fact = "The first bronchi to branch from the trachea are the right and left main bronchi";
  r.subject = "bronchi";
  r.attribute = "bronchi";
  r.prediction = "bronchi";
  r.prompt = "The first bronchi to branch from the trachea are the right and left main";
  r.group = "Respiratory";
  return r;
}

}  // namespace

TEST_CASE("the reference record parses with its subject and prediction") {
  std::istringstream in(
      R"({"known_id": null, "full_fact": "The first bronchi to branch from the trachea are the right and left main bronchi", "subject": "bronchi", "attribute": "bronchi", "prediction": "bronchi", "prompt": "The first bronchi to branch from the trachea are the right and left main", "group": "Respiratory", "template": "NONE", "relation_id": "NONE"})");
  ParseResult res = parse_facts(in);
  REQUIRE(res.errors.empty());
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].subject == "bronchi");
  CHECK(res.records[0].prediction == "bronchi");
  CHECK(!res.records[0].known_id.has_value());
  CHECK(!res.records[0].template_.has_value());
  CHECK(validate_fact(res.records[0]).empty());
}

TEST_CASE("a line missing prompt reports a schema error without aborting") {
  std::istringstream in(
      "{\"full_fact\":\"a b c\",\"subject\":\"a\",\"attribute\":\"c\",\"prediction\":\"c\",\"group\":\"G\"}\n"
      "{\"full_fact\":\"x y z\",\"subject\":\"x\",\"attribute\":\"z\",\"prediction\":\"z\",\"prompt\":\"x y\",\"group\":\"G\"}\n");
  ParseResult res = parse_facts(in);
  REQUIRE(res.errors.size() == 1);
  CHECK(res.errors[0].line == 1);
  CHECK(res.errors[0].field == "prompt");
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].subject == "x");
}

TEST_CASE("corrupted lines are counted but the stream continues") {
  std::ostringstream src;
  for (int i = 0; i < 100; ++i) {
    if (i == 10 || i == 50 || i == 99) {
      src << "{broken json line\n";
    } else {
      FactRecord r = bronchi_record();
      r.known_id = "id-" + std::to_string(i);
      src << serialize_fact(r) << "\n";
    }
  }
  std::istringstream in(src.str());
  ParseResult res = parse_facts(in);
  CHECK(res.records.size() == 97);
  CHECK(res.errors.size() == 3);
  CHECK(res.errors[0].line == 11);
}

TEST_CASE("serialize then parse returns the identical record") {
  FactRecord r = bronchi_record();
  r.known_id = "k1";
  r.relation_id = "r1";
  r.template_ = "t {} x";
  std::istringstream in(serialize_fact(r));
  ParseResult res = parse_facts(in);
  REQUIRE(res.errors.empty());
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0] == r);

  FactRecord bare = bronchi_record();
  std::istringstream in2(serialize_fact(bare));
  CHECK(parse_facts(in2).records[0] == bare);
}

TEST_CASE("record keys are stable and prefer known_id") {
  FactRecord r = bronchi_record();
  CHECK(r.key() == r.key());
  std::string digest = r.key();
  r.known_id = "abc";
  CHECK(r.key() == "abc");
  FactRecord other = bronchi_record();
  other.subject = "trachea";
  other.prompt = other.prompt;
  CHECK(other.key() != digest);
}

TEST_CASE("validation flags missing subject and bad prefix") {
  FactRecord r = bronchi_record();
  r.subject = "larynx";
  auto issues = validate_fact(r);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].kind == IssueKind::SubjectNotInPrompt);

  FactRecord p = bronchi_record();
  p.prompt = "A completely different prompt with bronchi";
  issues = validate_fact(p);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].kind == IssueKind::PromptNotPrefix);

  // whitespace differences alone do not break the prefix rule
  FactRecord w = bronchi_record();
  w.prompt = "The  first   bronchi to branch from the trachea are the right and left main";
  CHECK(validate_fact(w).empty());
}

TEST_CASE("long facts get a soft warning only") {
  FactRecord r = bronchi_record();
  r.full_fact = "one two three four five six seven eight nine ten eleven twelve "
                "thirteen fourteen fifteen sixteen seventeen eighteen nineteen twenty";
  r.prompt = "one two three four five six seven eight nine ten eleven twelve "
             "thirteen fourteen fifteen sixteen seventeen eighteen nineteen";
  r.subject = "three";
  auto issues = validate_fact(r);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].kind == IssueKind::WordLimitExceeded);
}

TEST_CASE("validation is pure") {
  FactRecord r = bronchi_record();
  r.subject = "larynx";
  auto a = validate_fact(r);
  auto b = validate_fact(r);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].kind == b[i].kind);
    CHECK(a[i].detail == b[i].detail);
  }
}

namespace {

CategoryManifest birds_like_manifest() {
  return CategoryManifest::from_json_text(R"({
    "category": "Birds",
    "relation": "Taxonomic",
    "subcategories": [
      {"name": "Animalia", "exclusions": ["chordata", "aves", "corvus", "crow"]},
      {"name": "Chordata", "exclusions": ["aves", "corvus", "crow"]},
      {"name": "Aves", "exclusions": ["corvus", "crow"]},
      {"name": "Corvus", "exclusions": ["crow"]},
      {"name": "American Crow", "exclusions": []}
    ]
  })");
}

FactRecord fact_of(const std::string& group, const std::string& subject) {
  FactRecord r;
  r.group = group;
  r.subject = subject;
  r.full_fact = "The " + subject + " exists somewhere";
  r.prompt = "The " + subject + " exists";
  r.attribute = "somewhere";
  r.prediction = "somewhere";
  return r;
}

}  // namespace

TEST_CASE("higher-level facts naming lower-level subjects are violations") {
  CategoryManifest m = birds_like_manifest();
  std::vector<FactRecord> facts = {
      fact_of("Chordata", "American crow"),
      fact_of("Chordata", "notochord"),
      fact_of("American Crow", "American crow"),
  };
  auto violations = check_mutual_exclusivity(facts, m);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].subcategory == "Chordata");
  CHECK(violations[0].subject == "American crow");
  CHECK(violations[0].term == "crow");
}

TEST_CASE("word-boundary matching avoids substring false positives") {
  CategoryManifest m = birds_like_manifest();
  // "crowd" contains "crow" but not as a word
  std::vector<FactRecord> facts = {fact_of("Aves", "the crowd of birds")};
  CHECK(check_mutual_exclusivity(facts, m).empty());
  facts = {fact_of("Aves", "the Crow itself")};
  CHECK(check_mutual_exclusivity(facts, m).size() == 1);
}

TEST_CASE("manifests without exclusions never produce violations") {
  CategoryManifest m = CategoryManifest::from_json_text(R"({
    "category": "Organ Systems", "relation": "Meronomic",
    "subcategories": [{"name": "Respiratory"}, {"name": "Circulatory"}]
  })");
  std::vector<FactRecord> facts;
  for (int i = 0; i < 50; ++i)
    facts.push_back(fact_of(i % 2 ? "Respiratory" : "Circulatory",
                            "subject number " + std::to_string(i)));
  CHECK(check_mutual_exclusivity(facts, m).empty());
}

TEST_CASE("seeded violations in a synthetic manifest are all recovered") {
  CategoryManifest m = CategoryManifest::from_json_text(R"({
    "category": "Synthetic", "relation": "Taxonomic",
    "subcategories": [
      {"name": "L0", "exclusions": ["alpha", "beta"]},
      {"name": "L1", "exclusions": ["beta"]},
      {"name": "L2", "exclusions": []}
    ]
  })");
  std::vector<FactRecord> facts;
  std::vector<std::pair<std::string, std::string>> expected;
  for (int i = 0; i < 30; ++i) {
    std::string group = "L" + std::to_string(i % 3);
    std::string subject = "plain subject " + std::to_string(i);
    if (i % 7 == 0 && group != "L2") {
      subject = "the beta case " + std::to_string(i);
      expected.push_back({group, subject});
    }
    facts.push_back(fact_of(group, subject));
  }
  auto violations = check_mutual_exclusivity(facts, m);
  REQUIRE(violations.size() == expected.size());
  for (const auto& v : violations) {
    bool found = false;
    for (const auto& [g, s] : expected)
      if (v.subcategory == g && v.subject == s) found = true;
    CHECK(found);
  }
}

TEST_CASE("summaries count per subcategory and add up") {
  CategoryManifest m = CategoryManifest::from_json_text(R"({
    "category": "Organ Systems", "relation": "Meronomic",
    "subcategories": [{"name": "Respiratory"}, {"name": "Circulatory"}, {"name": "Skeletal"}]
  })");
  std::vector<FactRecord> facts;
  for (int i = 0; i < 7; ++i) facts.push_back(fact_of("Respiratory", "s"));
  for (int i = 0; i < 4; ++i) facts.push_back(fact_of("Circulatory", "s"));
  auto sums = summarize(facts, {m});
  REQUIRE(sums.size() == 1);
  CHECK(sums[0].subcategory_count == 3);
  CHECK(sums[0].total_facts == 11);
  REQUIRE(sums[0].subcategories.size() == 3);
  CHECK(sums[0].subcategories[0].facts == 7);
  CHECK(sums[0].subcategories[1].facts == 4);
  CHECK(sums[0].subcategories[2].facts == 0);
  size_t total = 0;
  for (const auto& s : sums[0].subcategories) total += s.facts;
  CHECK(total == sums[0].total_facts);

  auto empty = summarize({}, {m});
  CHECK(empty[0].total_facts == 0);
}
