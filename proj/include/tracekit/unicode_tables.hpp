#pragma once

#include <cstddef>
#include <cstdint>

namespace tracekit::detail {

struct CodepointRange {
    uint32_t first;
    uint32_t last;  // inclusive
};

// Range tables generated from the reference tokenizer's regex engine; see
// tests/oracle/gen_unicode_tables.py.
extern const CodepointRange kLetterRanges[];
extern const size_t kLetterRangesCount;
extern const CodepointRange kNumberRanges[];
extern const size_t kNumberRangesCount;
extern const CodepointRange kSpaceRanges[];
extern const size_t kSpaceRangesCount;

inline bool in_ranges(uint32_t cp, const CodepointRange* ranges, size_t count) {
    size_t lo = 0, hi = count;
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (cp < ranges[mid].first) {
            hi = mid;
        } else if (cp > ranges[mid].last) {
            lo = mid + 1;
        } else {
            return true;
        }
    }
    return false;
}

inline bool is_letter(uint32_t cp) { return in_ranges(cp, kLetterRanges, kLetterRangesCount); }
inline bool is_number(uint32_t cp) { return in_ranges(cp, kNumberRanges, kNumberRangesCount); }
inline bool is_whitespace(uint32_t cp) { return in_ranges(cp, kSpaceRanges, kSpaceRangesCount); }

}  // namespace tracekit::detail
