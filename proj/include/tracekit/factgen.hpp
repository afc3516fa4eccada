#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tracekit/darc.hpp"

namespace tracekit {

class EmptyBatch : public error {
  using error::error;
};
class AuthError : public error {
  using error::error;
};
class RateLimited : public error {
  using error::error;
};
class TransportError : public error {
  using error::error;
};

struct GenerationJob {
  std::string subcategory;
  std::string topic;  // e.g. "the human body's respiratory system"
  int batch_size = 100;
  std::array<std::string, 3> exemplars;
  std::vector<std::string> prior_facts;  // oldest first
};

// Capped feedback: only this many of the newest prior facts ride along in
// the stage-1 prompt.
constexpr size_t kPriorFactWindow = 100;

std::string build_generation_prompt(const GenerationJob& job);

std::string build_conversion_prompt(const std::vector<std::string>& raw_facts,
                                    const std::string& subcategory);

// One line per candidate fact; numbering and bullet prefixes stripped.
std::vector<std::string> split_fact_lines(const std::string& completion);

struct ChatReply {
  int status = 0;  // 0 means the request never completed
  std::string body;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatReply post(const std::string& request_body) = 0;
};

// OpenAI-compatible chat-completions endpoint. Plain http; the mock server
// used in tests and offline replay cover the desk-scale path.
class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(std::string endpoint, std::string api_key);
  static HttpChatClient from_env();  // FACTGEN_ENDPOINT, FACTGEN_API_KEY
  ChatReply post(const std::string& request_body) override;

 private:
  std::string base_;
  std::string path_;
  std::string api_key_;
};

// Feeds back canned replies in order; records every request body.
class ReplayClient : public ChatClient {
 public:
  explicit ReplayClient(std::vector<ChatReply> replies) : replies_(std::move(replies)) {}
  ChatReply post(const std::string& request_body) override;
  const std::vector<std::string>& requests() const { return requests_; }

 private:
  std::vector<ChatReply> replies_;
  std::vector<std::string> requests_;
  size_t next_ = 0;
};

// Reads an archived response body back as a status-200 reply.
ChatReply archived_reply(const std::string& response_json_path);

struct StageResult {
  std::string text;  // completion content, verbatim
  int attempts = 1;
};

// One chat call at service-default sampling. Writes
// <archive_prefix>.request.json before sending and
// <archive_prefix>.response.json before parsing. Transient failures
// (429, 5xx, transport) retry up to 3 attempts with exponential backoff.
StageResult run_stage(ChatClient& client, const std::string& model, const std::string& prompt,
                      const std::string& archive_prefix, int backoff_ms = 1000);

struct Stage2Result {
  std::vector<FactRecord> records;
  std::vector<std::string> skipped;  // chunks that would not parse
};

// Extracts fact objects from a stage-2 completion. Tolerates code fences,
// trailing commas, and bare NONE tokens; anything else is skipped.
Stage2Result parse_stage2(const std::string& completion);

struct MergeResult {
  std::vector<std::string> merged;
  size_t removed = 0;
};

// Lowercased, whitespace-collapsed duplicate-detection key.
std::string normalized_fact_key(const std::string& fact);

// Case-insensitive, whitespace-normalized exact-duplicate removal;
// accumulated facts keep priority over fresh ones.
MergeResult dedupe_and_merge(const std::vector<std::string>& fresh,
                             const std::vector<std::string>& accumulated);

enum class Verdict : uint8_t { Ok, Vague, Inaccurate, Fixed };

const char* verdict_name(Verdict v);
Verdict verdict_from_name(std::string_view name);

struct AuditSample {
  std::string subcategory;
  std::vector<std::string> fact_keys;  // 25, or every fact when fewer
  std::vector<Verdict> verdicts;       // parallel, filled by record_audit
  size_t errors = 0;
  double error_rate = 0;
  // rate <= 1% OR a clean sample; both inputs stay recorded because 1/25
  // already exceeds the threshold
  bool passed = false;
};

AuditSample audit_sample(const std::string& subcategory, const std::vector<FactRecord>& facts,
                         uint64_t seed);
void record_audit(AuditSample& sample, const std::vector<Verdict>& verdicts);

}  // namespace tracekit
