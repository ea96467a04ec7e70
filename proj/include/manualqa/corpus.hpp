#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manualqa {

// One pre-extracted manual: an ordered list of text blocks in reading order.
struct RawDocument {
    std::string doc_id;
    std::vector<std::string> blocks;
};

struct Sentence {
    std::size_t index = 0;       // zero-based position within its section
    std::string text;
    std::size_t token_count = 0; // whitespace-separated words
};

struct Section {
    std::string section_id;
    std::string title;                // empty for untitled leading sections
    std::vector<Sentence> sentences;  // indices contiguous 0..n-1
    std::size_t paragraph_count = 0;  // contiguous body-block groups merged in

    // Section body as one string (sentences joined by single spaces).
    std::string text() const;
};

struct Manual {
    std::string manual_id;
    std::vector<Section> sections;

    const Section* find_section(std::string_view section_id) const;
};

struct CorpusStats {
    std::size_t n_manuals = 0;
    std::size_t n_paragraphs = 0;
    std::size_t n_sentences = 0;
    double sentences_per_paragraph = 0.0;
    double words_per_sentence = 0.0;
    std::size_t total_words = 0;
};

struct SegmentOptions {
    bool toc_filter = true;
    // Words after which a '.' does not end a sentence. Compared case-insensitively.
    std::vector<std::string> abbreviations = default_abbreviations();

    static std::vector<std::string> default_abbreviations();
};

// Strips every character outside printable ASCII (plus newline), collapses
// whitespace runs within lines, trims each line, drops empty lines.
// Idempotent; empty input stays empty.
std::string clean_text(std::string_view raw);

// Rule-based sentence splitter: boundaries at . ? ! and newline, except after
// a known abbreviation or inside a decimal number. Punctuation stays with the
// sentence on its left.
std::vector<std::string> split_sentences(std::string_view text,
                                         const std::vector<std::string>& abbreviations);

// Heading rule: at most 8 whitespace-separated tokens and either all-caps or
// no terminal punctuation.
bool is_heading(std::string_view block);

// TOC heuristic: more than half of the block's lines end in a bare number.
bool is_toc_block(std::string_view block);

// Groups cleaned blocks into sections at heading boundaries and splits each
// section body into sentences. Throws std::runtime_error when no block
// survives cleaning/TOC filtering.
Manual segment(const RawDocument& doc, const SegmentOptions& options = {});

CorpusStats corpus_stats(std::span<const Manual> manuals);

// JSONL ingestion: one object per line, {"manual_id": ..., "blocks": [...]}.
std::vector<RawDocument> read_raw_documents(std::istream& in);
std::vector<RawDocument> read_raw_documents_file(const std::string& path);

// Segmented corpus JSONL: {"manual_id", "sections":[{"section_id","title",
// "sentences":[...], "paragraph_count"}]}.
void write_manuals(std::ostream& out, std::span<const Manual> manuals);
void write_manuals_file(const std::string& path, std::span<const Manual> manuals);
std::vector<Manual> read_manuals(std::istream& in);
std::vector<Manual> read_manuals_file(const std::string& path);

// Table-style CSV with header "property,value".
std::string corpus_stats_csv(const CorpusStats& stats);

}  // namespace manualqa
