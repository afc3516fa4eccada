#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "tracekit/rng.hpp"
#include "tracekit/tokenizer.hpp"

using namespace tracekit;
using nlohmann::json;

namespace {

const Vocab& fixture_vocab() {
  static Vocab v = Vocab::load(std::string(FIXTURE_DIR) + "/tokenizer/vocab.json",
                               std::string(FIXTURE_DIR) + "/tokenizer/merges.txt");
  return v;
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  return json::parse(f);
}

std::string random_utf8(SplitMix64& rng, int max_chars) {
  std::string s;
  int n = int(rng.next() % uint64_t(max_chars + 1));
  for (int i = 0; i < n; ++i) {
    uint64_t pick = rng.next() % 100;
    uint32_t cp;
    if (pick < 55) {
      cp = 0x20 + uint32_t(rng.next() % 0x5F);  // ascii incl space
    } else if (pick < 65) {
      cp = uint32_t(rng.next() % 0x20);  // controls, tabs, newlines
    } else if (pick < 85) {
      cp = 0xA0 + uint32_t(rng.next() % 0x2000);
    } else {
      cp = 0x1F300 + uint32_t(rng.next() % 0x200);  // emoji block
    }
    if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0x40;
    if (cp < 0x80) {
      s += char(cp);
    } else if (cp < 0x800) {
      s += char(0xC0 | (cp >> 6));
      s += char(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      s += char(0xE0 | (cp >> 12));
      s += char(0x80 | ((cp >> 6) & 0x3F));
      s += char(0x80 | (cp & 0x3F));
    } else {
      s += char(0xF0 | (cp >> 18));
      s += char(0x80 | ((cp >> 12) & 0x3F));
      s += char(0x80 | ((cp >> 6) & 0x3F));
      s += char(0x80 | (cp & 0x3F));
    }
  }
  return s;
}

}  // namespace

TEST_CASE("vocab loads with the full fixture size") {
  CHECK(fixture_vocab().size() == 512);
}

TEST_CASE("empty text encodes to nothing and back") {
  CHECK(encode("", fixture_vocab()).empty());
  CHECK(decode({}, fixture_vocab()) == "");
}

TEST_CASE("corpus encodes id-identically to the reference tokenizer") {
  std::ifstream corpus(std::string(FIXTURE_DIR) + "/corpus_1k.txt");
  REQUIRE(corpus.good());
  json ref = load_json(std::string(FIXTURE_DIR) + "/tokenizer/corpus_ids.json");
  std::string line;
  size_t i = 0;
  while (std::getline(corpus, line)) {
    REQUIRE(i < ref.size());
    std::vector<int> want = ref[i].get<std::vector<int>>();
    std::vector<int> got = encode(line, fixture_vocab());
    if (got != want) {
      CAPTURE(line);
      CAPTURE(i);
      REQUIRE(got == want);
    }
    ++i;
  }
  CHECK(i == ref.size());
}

TEST_CASE("tricky strings encode id-identically to the reference tokenizer") {
  json cases = load_json(std::string(FIXTURE_DIR) + "/tokenizer/parity_cases.json");
  for (const auto& c : cases) {
    std::string text = c["text"].get<std::string>();
    std::vector<int> want = c["ids"].get<std::vector<int>>();
    CAPTURE(text);
    CHECK(encode(text, fixture_vocab()) == want);
    CHECK(decode(want, fixture_vocab()) == text);
  }
}

TEST_CASE("10k random strings round-trip") {
  SplitMix64 rng(20240818);
  for (int i = 0; i < 10000; ++i) {
    std::string s = random_utf8(rng, 40);
    std::vector<int> ids = encode(s, fixture_vocab());
    for (int id : ids) {
      REQUIRE(id >= 0);
      REQUIRE(id < fixture_vocab().size());
    }
    REQUIRE(decode(ids, fixture_vocab()) == s);
  }
}

TEST_CASE("decode rejects out-of-range ids") {
  CHECK_THROWS_AS(decode({512}, fixture_vocab()), UnknownId);
  CHECK_THROWS_AS(decode({-1}, fixture_vocab()), UnknownId);
}

TEST_CASE("locate_subject covers the subject occurrence") {
  const Vocab& v = fixture_vocab();
  std::string prompt = "The first bronchi to branch from the trachea are the right and left main";
  TokenSpan span = locate_subject(prompt, "bronchi", v);
  std::vector<int> ids = encode(prompt, v);
  std::vector<int> span_ids(ids.begin() + span.start, ids.begin() + span.end + 1);
  std::string covered = decode(span_ids, v);
  CHECK(covered.find("bronchi") != std::string::npos);
  // nothing before the span may already contain the subject's first character range
  std::vector<int> before(ids.begin(), ids.begin() + span.start);
  CHECK(decode(before, v).find("bronchi") == std::string::npos);
}

TEST_CASE("whole-prompt subject spans every token") {
  const Vocab& v = fixture_vocab();
  TokenSpan span = locate_subject("dog", "dog", v);
  CHECK(span.start == 0);
  CHECK(span.end == int(encode("dog", v).size()) - 1);
}

TEST_CASE("repeated subject resolves to the last occurrence") {
  const Vocab& v = fixture_vocab();
  std::string prompt = "A dog is a dog";
  TokenSpan span = locate_subject(prompt, "dog", v);
  std::vector<int> ids = encode(prompt, v);
  std::vector<int> prefix(ids.begin(), ids.begin() + span.start);
  // everything before the span must still contain the first occurrence
  CHECK(decode(prefix, v).find("dog") != std::string::npos);
  std::vector<int> span_ids(ids.begin() + span.start, ids.begin() + span.end + 1);
  CHECK(decode(span_ids, v).find("dog") != std::string::npos);
}

TEST_CASE("missing subject raises") {
  CHECK_THROWS_AS(locate_subject("A dog is here", "cat", fixture_vocab()), SubjectNotFound);
  CHECK_THROWS_AS(locate_subject("A dog is here", "", fixture_vocab()), SubjectNotFound);
}

TEST_CASE("fixture fact subjects all locate inside their prompts") {
  std::ifstream f(std::string(FIXTURE_DIR) + "/facts/fixture_facts.jsonl");
  REQUIRE(f.good());
  const Vocab& v = fixture_vocab();
  std::string line;
  int count = 0;
  while (std::getline(f, line)) {
    json r = json::parse(line);
    std::string prompt = r["prompt"].get<std::string>();
    std::string subject = r["subject"].get<std::string>();
    TokenSpan span = locate_subject(prompt, subject, v);
    std::vector<int> ids = encode(prompt, v);
    REQUIRE(span.start >= 0);
    REQUIRE(span.end < int(ids.size()));
    std::vector<int> span_ids(ids.begin() + span.start, ids.begin() + span.end + 1);
    CHECK(decode(span_ids, v).find(subject) != std::string::npos);
    ++count;
  }
  CHECK(count == 60);
}

namespace {

// straightforward relabeling used as the oracle for bucketize
std::vector<Bucket> label_naive(TokenSpan span, int seq_len) {
  std::vector<Bucket> out(seq_len, Bucket::Further);
  for (int p = 0; p < seq_len; ++p) {
    if (p < span.start)
      out[p] = Bucket::PreSubject;
    else if (p == span.end)
      out[p] = Bucket::LastSubject;
    else if (p == span.start)
      out[p] = Bucket::FirstSubject;
    else if (p < span.end)
      out[p] = Bucket::MiddleSubject;
    else if (p == span.end + 1 && p != seq_len - 1)
      out[p] = Bucket::FirstSubsequent;
    else if (p == seq_len - 1)
      out[p] = Bucket::LastToken;
  }
  // span.end is matched before the LastToken branch, so the subject label
  // wins at the final position
  return out;
}

}  // namespace

TEST_CASE("bucketize matches the worked examples") {
  using B = Bucket;
  PositionBuckets b = bucketize({2, 4}, 10);
  std::vector<B> want = {B::PreSubject,     B::PreSubject, B::FirstSubject, B::MiddleSubject,
                         B::LastSubject,    B::FirstSubsequent, B::Further, B::Further,
                         B::Further,        B::LastToken};
  CHECK(b.assignment == want);

  PositionBuckets single = bucketize({3, 3}, 6);
  CHECK(single.assignment[3] == B::LastSubject);
  for (B x : single.assignment) {
    CHECK(x != B::FirstSubject);
    CHECK(x != B::MiddleSubject);
  }

  PositionBuckets tail = bucketize({3, 4}, 5);
  CHECK(tail.assignment[4] == B::LastSubject);
  for (B x : tail.assignment) CHECK(x != B::LastToken);
}

TEST_CASE("bucketize agrees with the naive labeler on all small spans") {
  for (int seq_len = 1; seq_len <= 6; ++seq_len)
    for (int s = 0; s < seq_len; ++s)
      for (int e = s; e < seq_len; ++e) {
        PositionBuckets b = bucketize({s, e}, seq_len);
        CAPTURE(seq_len);
        CAPTURE(s);
        CAPTURE(e);
        CHECK(b.assignment == label_naive({s, e}, seq_len));
      }
}

TEST_CASE("bucket totality holds for every span up to length 64") {
  for (int seq_len = 1; seq_len <= 64; ++seq_len)
    for (int s = 0; s < seq_len; ++s)
      for (int e = s; e < seq_len; ++e) {
        PositionBuckets b = bucketize({s, e}, seq_len);
        REQUIRE(int(b.assignment.size()) == seq_len);
        int last_subject = 0, first_subject = 0, middle_subject = 0;
        for (Bucket x : b.assignment) {
          last_subject += x == Bucket::LastSubject;
          first_subject += x == Bucket::FirstSubject;
          middle_subject += x == Bucket::MiddleSubject;
        }
        REQUIRE(last_subject == 1);
        REQUIRE(first_subject == (e - s + 1 >= 2 ? 1 : 0));
        REQUIRE((middle_subject > 0) == (e - s + 1 >= 3));
      }
}

TEST_CASE("bucket names round-trip including aliases") {
  for (int i = 0; i < kBucketCount; ++i) {
    Bucket b = Bucket(i);
    CHECK(bucket_from_name(bucket_name(b)) == b);
  }
  CHECK(bucket_from_name("last-subject") == Bucket::LastSubject);
  CHECK(bucket_from_name("last-token") == Bucket::LastToken);
  CHECK_THROWS(bucket_from_name("nonsense"));
}
