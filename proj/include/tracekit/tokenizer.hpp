#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tracekit/errors.hpp"

namespace tracekit {

class UnknownId : public error {
public:
    explicit UnknownId(int id) : error("unknown token id " + std::to_string(id)) {}
};

class SubjectNotFound : public error {
public:
    SubjectNotFound(const std::string& subject, const std::string& prompt)
        : error("subject \"" + subject + "\" not found in prompt \"" + prompt + "\"") {}
};

// GPT-2 byte-level BPE vocabulary: token string (byte-remapped unicode)
// <-> id, plus the ordered merge list. Immutable after load; shareable
// across threads.
class Vocab {
public:
    // Reads the published GPT-2 file pair: vocab.json (token -> id) and
    // merges.txt (one merge per line, first line is a header).
    static Vocab load(const std::string& vocab_json_path, const std::string& merges_txt_path);

    int size() const { return static_cast<int>(id_to_token_.size()); }

    int token_id(const std::string& token) const;             // -1 if absent
    const std::string& token_string(int id) const;            // throws UnknownId
    int merge_rank(const std::string& left, const std::string& right) const;  // INT_MAX if absent

    // Encodes raw bytes of one pre-token (already split) to ids.
    void bpe(std::string_view piece_bytes, std::vector<int>& out) const;

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> merge_rank_;  // "left right" -> rank
};

// Inclusive token-index span within a tokenized prompt.
struct TokenSpan {
    int start = 0;
    int end = 0;

    int length() const { return end - start + 1; }
    bool operator==(const TokenSpan&) const = default;
};

enum class Bucket : uint8_t {
    PreSubject = 0,
    FirstSubject,
    MiddleSubject,
    LastSubject,
    FirstSubsequent,
    Further,
    LastToken,
};

constexpr int kBucketCount = 7;

const char* bucket_name(Bucket b);
Bucket bucket_from_name(std::string_view name);  // throws error on unknown name

// One label per token position.
struct PositionBuckets {
    std::vector<Bucket> assignment;
};

// Byte-level BPE encode. Total: every byte sequence has an encoding.
std::vector<int> encode(std::string_view text, const Vocab& vocab);

// Inverse of encode on valid text. Throws UnknownId for out-of-range ids.
std::string decode(const std::vector<int>& ids, const Vocab& vocab);

// Token span covering the LAST substring occurrence of subject in prompt.
// Tokens straddling the occurrence's boundaries count as inside.
TokenSpan locate_subject(std::string_view prompt, std::string_view subject, const Vocab& vocab);

// Six-way stratification of token positions around the subject span.
PositionBuckets bucketize(TokenSpan span, int seq_len);

namespace detail {
// GPT-2 pre-tokenizer: splits text into pieces, each encoded separately.
std::vector<std::string_view> pretokenize(std::string_view text);
// GPT-2 byte <-> printable-unicode remapping.
const std::string& byte_to_unicode(uint8_t b);
int unicode_to_byte(uint32_t codepoint);  // -1 if not a remapped byte
}  // namespace detail

}  // namespace tracekit
