#include "tracekit/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <climits>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tracekit/unicode_tables.hpp"

namespace tracekit {

namespace detail {

// Decodes one UTF-8 codepoint at `i`, advancing `i`. Each invalid byte is
// surfaced as a private sentinel >= 0x110000 so callers can classify it as
// "other" without losing the byte.
static uint32_t next_codepoint(std::string_view s, size_t& i) {
    uint8_t b0 = static_cast<uint8_t>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int len = 0;
    uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        return 0x110000u + b0;
    }
    if (i + len > s.size()) {
        ++i;
        return 0x110000u + b0;
    }
    for (int k = 1; k < len; ++k) {
        uint8_t b = static_cast<uint8_t>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            ++i;
            return 0x110000u + b0;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    // Overlong encodings and surrogates also fall back to byte sentinels.
    static const uint32_t min_for_len[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        ++i;
        return 0x110000u + b0;
    }
    i += len;
    return cp;
}

static void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

namespace {

bool cls_letter(uint32_t cp) { return cp < 0x110000 && is_letter(cp); }
bool cls_number(uint32_t cp) { return cp < 0x110000 && is_number(cp); }
bool cls_space(uint32_t cp) { return cp < 0x110000 && is_whitespace(cp); }

// The byte <-> remapped-codepoint tables of byte-level BPE: printable
// latin-1 bytes map to themselves, the rest to 0x100 + running index.
struct ByteUnicodeTables {
    std::array<std::string, 256> byte_to_str;
    std::array<uint32_t, 256> byte_to_cp;
    std::unordered_map<uint32_t, int> cp_to_byte;

    ByteUnicodeTables() {
        auto printable = [](int b) {
            return (b >= 0x21 && b <= 0x7E) || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
        };
        int n = 0;
        for (int b = 0; b < 256; ++b) {
            uint32_t cp = printable(b) ? static_cast<uint32_t>(b) : static_cast<uint32_t>(256 + n++);
            byte_to_cp[b] = cp;
            std::string s;
            append_utf8(s, cp);
            byte_to_str[b] = s;
            cp_to_byte[cp] = b;
        }
    }
};

const ByteUnicodeTables& byte_tables() {
    static const ByteUnicodeTables tables;
    return tables;
}

}  // namespace

const std::string& byte_to_unicode(uint8_t b) { return byte_tables().byte_to_str[b]; }

int unicode_to_byte(uint32_t codepoint) {
    const auto& m = byte_tables().cp_to_byte;
    auto it = m.find(codepoint);
    return it == m.end() ? -1 : it->second;
}

// Hand-rolled equivalent of the GPT-2 pre-tokenizer pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// with ordered alternation, evaluated left to right over codepoints.
std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> pieces;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        size_t start = i;

        // Contraction literals ('s 't 're 've 'm 'll 'd), case-sensitive.
        if (text[i] == '\'') {
            static constexpr std::string_view contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
            // Longer alternatives never shadow shorter ones here because the
            // reference pattern lists them in this exact order.
            bool matched = false;
            for (std::string_view c : contractions) {
                if (text.substr(i).starts_with(c)) {
                    pieces.push_back(text.substr(i, c.size()));
                    i += c.size();
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }

        size_t j = i;
        uint32_t cp0 = next_codepoint(text, j);

        // " ?\p{L}+" and " ?\p{N}+" and " ?[^\s\p{L}\p{N}]+", in that order.
        // The optional prefix is a literal ASCII space.
        {
            size_t k = i;
            uint32_t cp = cp0;
            size_t after_space = j;
            if (cp == ' ') {
                k = j;
                if (k < n) {
                    size_t jj = k;
                    cp = next_codepoint(text, jj);
                    after_space = jj;
                } else {
                    cp = 0;  // lone trailing space: handled by the \s branches
                }
            }
            if (k < n && cls_letter(cp)) {
                size_t end = after_space;
                while (end < n) {
                    size_t jj = end;
                    uint32_t c = next_codepoint(text, jj);
                    if (!cls_letter(c)) break;
                    end = jj;
                }
                pieces.push_back(text.substr(start, end - start));
                i = end;
                continue;
            }
            if (k < n && cls_number(cp)) {
                size_t end = after_space;
                while (end < n) {
                    size_t jj = end;
                    uint32_t c = next_codepoint(text, jj);
                    if (!cls_number(c)) break;
                    end = jj;
                }
                pieces.push_back(text.substr(start, end - start));
                i = end;
                continue;
            }
            if (k < n && !cls_space(cp) && !cls_letter(cp) && !cls_number(cp)) {
                size_t end = after_space;
                while (end < n) {
                    size_t jj = end;
                    uint32_t c = next_codepoint(text, jj);
                    if (cls_space(c) || cls_letter(c) || cls_number(c)) break;
                    end = jj;
                }
                pieces.push_back(text.substr(start, end - start));
                i = end;
                continue;
            }
        }

        // "\s+(?!\S)" then "\s+": a whitespace run followed by non-space
        // yields all but its last whitespace char (if that leaves any).
        {
            size_t end = i;
            size_t last_ws_start = i;
            while (end < n) {
                size_t jj = end;
                uint32_t c = next_codepoint(text, jj);
                if (!cls_space(c)) break;
                last_ws_start = end;
                end = jj;
            }
            if (end > i) {
                if (end < n && last_ws_start > i) {
                    end = last_ws_start;  // leave the final whitespace char for the next piece
                }
                pieces.push_back(text.substr(i, end - i));
                i = end;
                continue;
            }
        }

        // Unreachable for real text: every codepoint falls in one class.
        pieces.push_back(text.substr(i, j - i));
        i = j;
    }
    return pieces;
}

}  // namespace detail

Vocab Vocab::load(const std::string& vocab_json_path, const std::string& merges_txt_path) {
    std::ifstream vf(vocab_json_path);
    if (!vf) throw error("cannot open vocab file " + vocab_json_path);
    nlohmann::json j;
    try {
        vf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw error("malformed vocab json " + vocab_json_path + ": " + e.what());
    }
    if (!j.is_object()) throw error("vocab json is not an object: " + vocab_json_path);

    Vocab v;
    v.id_to_token_.resize(j.size());
    std::vector<bool> seen(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_number_integer()) throw error("vocab id for token is not an integer");
        int id = it.value().get<int>();
        if (id < 0 || id >= static_cast<int>(j.size()) || seen[id])
            throw error("vocab ids are not dense and unique in [0, size)");
        seen[id] = true;
        v.id_to_token_[id] = it.key();
        if (!v.token_to_id_.emplace(it.key(), id).second) throw error("duplicate vocab token " + it.key());
    }

    // Byte-level coverage: all 256 single-byte symbols must be present so
    // encode() is total.
    for (int b = 0; b < 256; ++b) {
        if (!v.token_to_id_.count(detail::byte_to_unicode(static_cast<uint8_t>(b))))
            throw error("vocab is missing byte-level token for byte " + std::to_string(b));
    }
    // Every token must map back to bytes so decode() is total on valid ids.
    for (const auto& tok : v.id_to_token_) {
        size_t i = 0;
        while (i < tok.size()) {
            uint32_t cp = detail::next_codepoint(tok, i);
            if (detail::unicode_to_byte(cp) < 0)
                throw error("vocab token contains a non-byte-level codepoint: " + tok);
        }
    }

    std::ifstream mf(merges_txt_path);
    if (!mf) throw error("cannot open merges file " + merges_txt_path);
    std::string line;
    bool first = true;
    int rank = 0;
    while (std::getline(mf, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            first = false;
            // The published file starts with a "#version" header line.
            if (line.rfind("#", 0) == 0 || line.empty()) continue;
        }
        if (line.empty()) continue;
        auto sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size())
            throw error("malformed merges line: \"" + line + "\"");
        if (!v.merge_rank_.emplace(line, rank++).second) throw error("duplicate merge rule: \"" + line + "\"");
    }
    return v;
}

int Vocab::token_id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocab::token_string(int id) const {
    if (id < 0 || id >= size()) throw UnknownId(id);
    return id_to_token_[static_cast<size_t>(id)];
}

int Vocab::merge_rank(const std::string& left, const std::string& right) const {
    auto it = merge_rank_.find(left + " " + right);
    return it == merge_rank_.end() ? INT_MAX : it->second;
}

void Vocab::bpe(std::string_view piece_bytes, std::vector<int>& out) const {
    std::vector<std::string> word;
    word.reserve(piece_bytes.size());
    for (char c : piece_bytes) word.push_back(detail::byte_to_unicode(static_cast<uint8_t>(c)));

    while (word.size() >= 2) {
        // Lowest-ranked adjacent pair; first occurrence wins ties.
        int best_rank = INT_MAX;
        size_t best_i = 0;
        for (size_t i = 0; i + 1 < word.size(); ++i) {
            int r = merge_rank(word[i], word[i + 1]);
            if (r < best_rank) {
                best_rank = r;
                best_i = i;
            }
        }
        if (best_rank == INT_MAX) break;

        // Merge every occurrence of the chosen bigram in one left-to-right
        // pass, exactly as the reference implementation does.
        const std::string first = word[best_i];
        const std::string second = word[best_i + 1];
        std::vector<std::string> merged;
        merged.reserve(word.size());
        size_t i = 0;
        while (i < word.size()) {
            if (word[i] == first && i + 1 < word.size() && word[i + 1] == second) {
                merged.push_back(first + second);
                i += 2;
            } else {
                merged.push_back(word[i]);
                i += 1;
            }
        }
        word = std::move(merged);
    }

    for (const auto& sym : word) {
        int id = token_id(sym);
        if (id < 0) throw error("BPE produced a symbol missing from the vocab: " + sym);
        out.push_back(id);
    }
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
    std::vector<int> ids;
    for (std::string_view piece : detail::pretokenize(text)) vocab.bpe(piece, ids);
    return ids;
}

std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
    std::string remapped;
    for (int id : ids) remapped += vocab.token_string(id);
    std::string bytes;
    bytes.reserve(remapped.size());
    size_t i = 0;
    while (i < remapped.size()) {
        uint32_t cp = detail::next_codepoint(remapped, i);
        int b = detail::unicode_to_byte(cp);
        if (b < 0) throw error("decode: token contains non-byte-level codepoint");
        bytes.push_back(static_cast<char>(b));
    }
    return bytes;
}

TokenSpan locate_subject(std::string_view prompt, std::string_view subject, const Vocab& vocab) {
    if (subject.empty()) throw SubjectNotFound(std::string(subject), std::string(prompt));
    size_t occ = prompt.rfind(subject);
    if (occ == std::string_view::npos) throw SubjectNotFound(std::string(subject), std::string(prompt));
    size_t occ_end = occ + subject.size();  // exclusive

    std::vector<int> ids = encode(prompt, vocab);
    // Byte extents per token; decode(encode(x)) == x guarantees they tile the prompt.
    int span_start = -1, span_end = -1;
    size_t off = 0;
    for (size_t t = 0; t < ids.size(); ++t) {
        size_t len = decode({ids[t]}, vocab).size();
        size_t tok_begin = off, tok_end = off + len;
        off = tok_end;
        if (tok_end > occ && tok_begin < occ_end) {
            if (span_start < 0) span_start = static_cast<int>(t);
            span_end = static_cast<int>(t);
        }
    }
    if (span_start < 0) throw SubjectNotFound(std::string(subject), std::string(prompt));
    return TokenSpan{span_start, span_end};
}

PositionBuckets bucketize(TokenSpan span, int seq_len) {
    if (span.start < 0 || span.start > span.end || span.end >= seq_len)
        throw error("bucketize: span out of range");
    PositionBuckets pb;
    pb.assignment.resize(static_cast<size_t>(seq_len));
    const int last = seq_len - 1;
    for (int p = 0; p < seq_len; ++p) {
        Bucket b;
        if (p < span.start) {
            b = Bucket::PreSubject;
        } else if (p <= span.end) {
            // Subject labels always win over LastToken.
            if (p == span.end) {
                b = Bucket::LastSubject;
            } else if (p == span.start) {
                b = Bucket::FirstSubject;
            } else {
                b = Bucket::MiddleSubject;
            }
        } else if (p == span.end + 1 && p != last) {
            b = Bucket::FirstSubsequent;
        } else if (p == last) {
            b = Bucket::LastToken;
        } else {
            b = Bucket::Further;
        }
        pb.assignment[static_cast<size_t>(p)] = b;
    }
    return pb;
}

const char* bucket_name(Bucket b) {
    switch (b) {
        case Bucket::PreSubject: return "pre_subject";
        case Bucket::FirstSubject: return "first_subject";
        case Bucket::MiddleSubject: return "middle_subject";
        case Bucket::LastSubject: return "last_subject";
        case Bucket::FirstSubsequent: return "first_subsequent";
        case Bucket::Further: return "further";
        case Bucket::LastToken: return "last_token";
    }
    return "?";
}

Bucket bucket_from_name(std::string_view name) {
    for (int i = 0; i < kBucketCount; ++i) {
        Bucket b = static_cast<Bucket>(i);
        if (name == bucket_name(b)) return b;
    }
    // CLI-facing aliases.
    if (name == "last-subject") return Bucket::LastSubject;
    if (name == "last-token") return Bucket::LastToken;
    throw error("unknown bucket name: " + std::string(name));
}

}  // namespace tracekit
