#include "tracekit/factgen.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "tracekit/rng.hpp"

namespace tracekit {

using nlohmann::json;

std::string build_generation_prompt(const GenerationJob& job) {
  std::string out = "Generate " + std::to_string(job.batch_size) + " facts about " + job.topic +
                    ".\n\n"
                    "Limit the size of each fact to no more than 15 words.\n"
                    "Do not include punctuation in any fact.\n"
                    "Do not reuse any of the previous facts provided.\n\n"
                    "Here is an example of three facts and their correct formatting:\n";
  for (const std::string& ex : job.exemplars) out += "\n" + ex + "\n";
  if (!job.prior_facts.empty()) {
    out += "\nHere are the previous facts:\n";
    size_t start =
        job.prior_facts.size() > kPriorFactWindow ? job.prior_facts.size() - kPriorFactWindow : 0;
    for (size_t i = start; i < job.prior_facts.size(); ++i) out += "\n" + job.prior_facts[i];
    out += "\n";
  }
  return out;
}

std::string build_conversion_prompt(const std::vector<std::string>& raw_facts,
                                    const std::string& subcategory) {
  if (raw_facts.empty()) throw EmptyBatch("no facts to convert");
  std::string out =
      "Interpret and then format each of the provided facts about " + subcategory +
      " according to the following json format:\n\n"
      "{\n"
      "  \"known_id\": \"NONE\",\n"
      "  \"full_fact\": \"COMPLETE FACT\",\n"
      "  \"subject\": \"SUBJECT OF FACT\",\n"
      "  \"attribute\": \"OBJECT OF FACT or FINAL WORD OF FACT\",\n"
      "  \"prediction\": \"OBJECT OF FACT or FINAL WORD OF FACT\",\n"
      "  \"prompt\": \"ALL OF full_fact UP TO BUT NOT INCLUDING THE OBJECT OF FACT OR THE FINAL"
      " WORD OF FACT\",\n"
      "  \"group\": \"CATEGORY OF SUBJECT\",\n"
      "  \"relation_id\": \"NONE\",\n"
      "  \"template\": \"NONE\"\n"
      "}\n\n"
      "Here is an example of a fact with its correct JSON formatting:\n\n"
      "The first bronchi to branch from the trachea are the right and left main bronchi\n\n"
      "{\n"
      "  \"known_id\": \"NONE\",\n"
      "  \"full_fact\": \"The first bronchi to branch from the trachea are the right and left"
      " main bronchi\",\n"
      "  \"subject\": \"bronchi\",\n"
      "  \"attribute\": \"bronchi\",\n"
      "  \"prediction\": \"bronchi\",\n"
      "  \"prompt\": \"The first bronchi to branch from the trachea are the right and left"
      " main\",\n"
      "  \"group\": \"Respiratory\",\n"
      "  \"relation_id\": \"NONE\",\n"
      "  \"template\": \"NONE\"\n"
      "}\n\n"
      "The facts to be converted are:\n";
  for (const std::string& f : raw_facts) out += "\n" + f;
  out += "\n";
  return out;
}

std::vector<std::string> split_fact_lines(const std::string& completion) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= completion.size()) {
    size_t nl = completion.find('\n', pos);
    if (nl == std::string::npos) nl = completion.size();
    std::string line = completion.substr(pos, nl - pos);
    pos = nl + 1;
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ')
      line = line.substr(2);
    size_t d = 0;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    if (d > 0 && d + 1 < line.size() && (line[d] == '.' || line[d] == ')') && line[d + 1] == ' ')
      line = line.substr(d + 2);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

HttpChatClient::HttpChatClient(std::string endpoint, std::string api_key)
    : api_key_(std::move(api_key)) {
  size_t scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw error("endpoint needs a scheme: " + endpoint);
  size_t slash = endpoint.find('/', scheme + 3);
  if (slash == std::string::npos) {
    base_ = endpoint;
    path_ = "/v1/chat/completions";
  } else {
    base_ = endpoint.substr(0, slash);
    path_ = endpoint.substr(slash);
  }
}

HttpChatClient HttpChatClient::from_env() {
  const char* endpoint = std::getenv("FACTGEN_ENDPOINT");
  if (!endpoint || !*endpoint) throw error("FACTGEN_ENDPOINT is not set");
  const char* key = std::getenv("FACTGEN_API_KEY");
  return HttpChatClient(endpoint, key ? key : "");
}

ChatReply HttpChatClient::post(const std::string& request_body) {
  httplib::Client client(base_);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, request_body, "application/json");
  if (!res) return {0, httplib::to_string(res.error())};
  return {res->status, res->body};
}

ChatReply ReplayClient::post(const std::string& request_body) {
  requests_.push_back(request_body);
  if (next_ >= replies_.size()) throw TransportError("replay exhausted after " +
                                                     std::to_string(replies_.size()) + " replies");
  return replies_[next_++];
}

ChatReply archived_reply(const std::string& response_json_path) {
  std::ifstream f(response_json_path, std::ios::binary);
  if (!f) throw error("cannot open '" + response_json_path + "'");
  std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return {200, body};
}

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error("cannot write '" + path + "'");
  f << content;
}

std::string completion_text(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw TransportError("completion body is not JSON");
  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty())
    throw TransportError("completion body has no choices");
  const json& first = (*choices)[0];
  if (!first.is_object()) throw TransportError("completion body has no message content");
  const json msg = first.value("message", json::object());
  auto content = msg.find("content");
  if (content == msg.end() || !content->is_string())
    throw TransportError("completion body has no message content");
  return content->get<std::string>();
}

}  // namespace

StageResult run_stage(ChatClient& client, const std::string& model, const std::string& prompt,
                      const std::string& archive_prefix, int backoff_ms) {
  json request = {{"model", model},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  std::string body = request.dump(2);
  write_file(archive_prefix + ".request.json", body);

  ChatReply reply;
  int attempts = 0;
  for (;;) {
    ++attempts;
    reply = client.post(body);
    if (reply.status == 401 || reply.status == 403) {
      write_file(archive_prefix + ".response.json", reply.body);
      throw AuthError("service rejected credentials (" + std::to_string(reply.status) + ")");
    }
    bool transient = reply.status == 0 || reply.status == 429 || reply.status >= 500;
    if (!transient || attempts >= 3) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms << (attempts - 1)));
  }
  write_file(archive_prefix + ".response.json", reply.body);
  if (reply.status == 429)
    throw RateLimited("still rate limited after " + std::to_string(attempts) + " attempts");
  if (reply.status != 200)
    throw TransportError("status " + std::to_string(reply.status) + " after " +
                         std::to_string(attempts) + " attempts: " + reply.body);
  return {completion_text(reply.body), attempts};
}

namespace {

// strips ``` fence lines and rewrites ",}" ",]" and bare NONE outside strings
std::string relax_json(const std::string& text) {
  std::string defenced;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    size_t a = line.find_first_not_of(" \t");
    if (a == std::string::npos || line.compare(a, 3, "```") != 0) defenced += line + "\n";
  }
  std::string out;
  bool in_string = false, escaped = false;
  for (size_t i = 0; i < defenced.size(); ++i) {
    char c = defenced[i];
    if (in_string) {
      out += c;
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      out += c;
      continue;
    }
    if (c == ',') {
      size_t j = i + 1;
      while (j < defenced.size() &&
             std::isspace(static_cast<unsigned char>(defenced[j])))
        ++j;
      if (j < defenced.size() && (defenced[j] == '}' || defenced[j] == ']')) continue;
      out += c;
      continue;
    }
    if (c == 'N' && defenced.compare(i, 4, "NONE") == 0) {
      out += "null";
      i += 3;
      continue;
    }
    out += c;
  }
  return out;
}

std::vector<std::string> balanced_objects(const std::string& text) {
  std::vector<std::string> out;
  bool in_string = false, escaped = false;
  int depth = 0;
  size_t start = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      if (depth == 0) start = i;
      ++depth;
    } else if (c == '}') {
      if (depth > 0 && --depth == 0) out.push_back(text.substr(start, i - start + 1));
    }
  }
  return out;
}

std::optional<std::string> lenient_opt(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) return std::nullopt;
  std::string v = it->get<std::string>();
  if (v.empty() || v == "NONE" || v == "null") return std::nullopt;
  return v;
}

}  // namespace

Stage2Result parse_stage2(const std::string& completion) {
  Stage2Result out;
  for (const std::string& chunk : balanced_objects(relax_json(completion))) {
    json j = json::parse(chunk, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      out.skipped.push_back(chunk);
      continue;
    }
    FactRecord rec;
    bool ok = true;
    auto need = [&](const char* name, std::string& dst) {
      auto it = j.find(name);
      if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
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
    if (!ok) {
      out.skipped.push_back(chunk);
      continue;
    }
    rec.known_id = lenient_opt(j, "known_id");
    rec.relation_id = lenient_opt(j, "relation_id");
    rec.template_ = lenient_opt(j, "template");
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::string normalized_fact_key(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += char(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

MergeResult dedupe_and_merge(const std::vector<std::string>& fresh,
                             const std::vector<std::string>& accumulated) {
  MergeResult out;
  std::set<std::string> seen;
  auto take = [&](const std::string& f) {
    if (seen.insert(normalized_fact_key(f)).second)
      out.merged.push_back(f);
    else
      ++out.removed;
  };
  for (const std::string& f : accumulated) take(f);
  for (const std::string& f : fresh) take(f);
  return out;
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Ok: return "ok";
    case Verdict::Vague: return "vague";
    case Verdict::Inaccurate: return "inaccurate";
    case Verdict::Fixed: return "fixed";
  }
  return "?";
}

Verdict verdict_from_name(std::string_view name) {
  if (name == "ok") return Verdict::Ok;
  if (name == "vague") return Verdict::Vague;
  if (name == "inaccurate") return Verdict::Inaccurate;
  if (name == "fixed") return Verdict::Fixed;
  throw error("unknown verdict '" + std::string(name) + "'");
}

AuditSample audit_sample(const std::string& subcategory, const std::vector<FactRecord>& facts,
                         uint64_t seed) {
  AuditSample s;
  s.subcategory = subcategory;
  const size_t n = facts.size();
  const size_t k = std::min<size_t>(25, n);
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  SplitMix64 rng(seed);
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + size_t(rng.next() % uint64_t(n - i));
    std::swap(idx[i], idx[j]);
    s.fact_keys.push_back(facts[idx[i]].key());
  }
  return s;
}

void record_audit(AuditSample& sample, const std::vector<Verdict>& verdicts) {
  if (verdicts.size() != sample.fact_keys.size())
    throw error("verdict count " + std::to_string(verdicts.size()) + " does not match sample " +
                std::to_string(sample.fact_keys.size()));
  sample.verdicts = verdicts;
  sample.errors = 0;
  for (Verdict v : verdicts)
    if (v != Verdict::Ok) ++sample.errors;
  sample.error_rate =
      sample.fact_keys.empty() ? 0.0 : double(sample.errors) / double(sample.fact_keys.size());
  sample.passed = sample.errors == 0 || sample.error_rate <= 0.01;
}

}  // namespace tracekit
