#include "manualqa/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace manualqa {

namespace {

bool is_printable_ascii(unsigned char c) { return c >= 0x20 && c <= 0x7E; }

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == '\n') {
            lines.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return lines;
}

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
               return std::isdigit(c) != 0;
           });
}

bool is_terminal_punct(char c) { return c == '.' || c == '?' || c == '!'; }

std::size_t count_words(std::string_view s) { return split_words(s).size(); }

}  // namespace

std::string Section::text() const {
    std::string out;
    for (const Sentence& s : sentences) {
        if (!out.empty()) out.push_back(' ');
        out += s.text;
    }
    return out;
}

const Section* Manual::find_section(std::string_view section_id) const {
    for (const Section& s : sections) {
        if (s.section_id == section_id) return &s;
    }
    return nullptr;
}

std::vector<std::string> SegmentOptions::default_abbreviations() {
    return {"e.g", "i.e", "etc", "mr", "mrs", "ms", "dr", "fig", "no", "vs",
            "st", "inc", "ltd", "approx"};
}

std::string clean_text(std::string_view raw) {
    std::string filtered;
    filtered.reserve(raw.size());
    for (unsigned char c : raw) {
        if (c == '\n') {
            filtered.push_back('\n');
        } else if (c == '\t') {
            filtered.push_back(' ');
        } else if (is_printable_ascii(c)) {
            filtered.push_back(static_cast<char>(c));
        }
        // everything else (non-ASCII, control chars, \r) is dropped
    }

    std::string out;
    for (std::string_view line : split_lines(filtered)) {
        std::string collapsed;
        bool in_space = false;
        for (char c : line) {
            if (c == ' ') {
                in_space = true;
            } else {
                if (in_space && !collapsed.empty()) collapsed.push_back(' ');
                in_space = false;
                collapsed.push_back(c);
            }
        }
        if (collapsed.empty()) continue;
        if (!out.empty()) out.push_back('\n');
        out += collapsed;
    }
    return out;
}

std::vector<std::string> split_sentences(std::string_view text,
                                         const std::vector<std::string>& abbreviations) {
    std::vector<std::string> lowered_abbrevs;
    lowered_abbrevs.reserve(abbreviations.size());
    for (const auto& a : abbreviations) lowered_abbrevs.push_back(to_lower(a));

    auto preceding_word = [&](std::size_t dot) {
        // word immediately before position `dot`, without the dot itself
        std::size_t e = dot;
        std::size_t b = e;
        while (b > 0 && !std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
        return to_lower(text.substr(b, e - b));
    };

    auto is_abbreviation_dot = [&](std::size_t i) {
        const std::string word = preceding_word(i);
        return std::find(lowered_abbrevs.begin(), lowered_abbrevs.end(), word) !=
               lowered_abbrevs.end();
    };

    auto is_decimal_dot = [&](std::size_t i) {
        return i > 0 && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
               std::isdigit(static_cast<unsigned char>(text[i + 1]));
    };

    std::vector<std::string> sentences;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        std::string s = trim(text.substr(start, end - start));
        if (!s.empty()) sentences.push_back(std::move(s));
        start = end;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            flush(i);
            start = i + 1;
            continue;
        }
        if (!is_terminal_punct(c)) continue;
        if (c == '.' && (is_decimal_dot(i) || is_abbreviation_dot(i))) continue;
        // a dot glued to following text is word-internal ("e.g.", "v1.x")
        if (c == '.' && i + 1 < text.size() &&
            !std::isspace(static_cast<unsigned char>(text[i + 1])) &&
            !is_terminal_punct(text[i + 1])) {
            continue;
        }
        // consume any run of terminal punctuation ("?!", "...")
        std::size_t j = i;
        while (j + 1 < text.size() && is_terminal_punct(text[j + 1])) ++j;
        flush(j + 1);
        i = j;
    }
    flush(text.size());
    return sentences;
}

bool is_heading(std::string_view block) {
    const auto words = split_words(block);
    if (words.empty() || words.size() > 8) return false;

    bool has_letter = false;
    bool has_lower = false;
    for (char c : block) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            has_letter = true;
            if (std::islower(static_cast<unsigned char>(c))) has_lower = true;
        }
    }
    const bool all_caps = has_letter && !has_lower;
    const bool no_terminal = !is_terminal_punct(block.back());
    return all_caps || no_terminal;
}

bool is_toc_block(std::string_view block) {
    std::size_t n_lines = 0;
    std::size_t n_page_lines = 0;
    for (std::string_view line : split_lines(block)) {
        const auto words = split_words(line);
        if (words.empty()) continue;
        ++n_lines;
        if (all_digits(words.back())) ++n_page_lines;
    }
    return n_lines > 0 && 2 * n_page_lines > n_lines;
}

Manual segment(const RawDocument& doc, const SegmentOptions& options) {
    Manual manual;
    manual.manual_id = doc.doc_id;

    Section* current = nullptr;
    bool paragraph_open = false;
    std::size_t retained = 0;

    auto open_section = [&](std::string title) -> Section* {
        Section section;
        char buf[24];
        std::snprintf(buf, sizeof(buf), "s%03zu", manual.sections.size());
        section.section_id = buf;
        section.title = std::move(title);
        manual.sections.push_back(std::move(section));
        paragraph_open = false;
        return &manual.sections.back();
    };

    for (const std::string& raw_block : doc.blocks) {
        const std::string block = clean_text(raw_block);
        if (block.empty()) {
            paragraph_open = false;  // empty block separates paragraphs
            continue;
        }
        if (options.toc_filter && is_toc_block(block)) {
            paragraph_open = false;
            continue;
        }
        ++retained;
        if (is_heading(block)) {
            current = open_section(block);
            continue;
        }
        if (current == nullptr) current = open_section("");
        if (!paragraph_open) {
            ++current->paragraph_count;
            paragraph_open = true;
        }
        for (std::string& text : split_sentences(block, options.abbreviations)) {
            Sentence sentence;
            sentence.index = current->sentences.size();
            sentence.token_count = count_words(text);
            sentence.text = std::move(text);
            current->sentences.push_back(std::move(sentence));
        }
    }

    if (retained == 0) {
        throw std::runtime_error("segment: manual '" + doc.doc_id +
                                 "' has no retained blocks (empty manual)");
    }
    return manual;
}

CorpusStats corpus_stats(std::span<const Manual> manuals) {
    CorpusStats stats;
    stats.n_manuals = manuals.size();
    for (const Manual& m : manuals) {
        for (const Section& s : m.sections) {
            stats.n_paragraphs += s.paragraph_count;
            stats.n_sentences += s.sentences.size();
            for (const Sentence& sent : s.sentences) stats.total_words += sent.token_count;
        }
    }
    if (stats.n_paragraphs > 0) {
        stats.sentences_per_paragraph =
            static_cast<double>(stats.n_sentences) / static_cast<double>(stats.n_paragraphs);
    }
    if (stats.n_sentences > 0) {
        stats.words_per_sentence =
            static_cast<double>(stats.total_words) / static_cast<double>(stats.n_sentences);
    }
    return stats;
}

std::vector<RawDocument> read_raw_documents(std::istream& in) {
    std::vector<RawDocument> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                     ": invalid JSON: " + e.what());
        }
        RawDocument doc;
        doc.doc_id = j.at("manual_id").get<std::string>();
        for (const auto& b : j.at("blocks")) doc.blocks.push_back(b.get<std::string>());
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<RawDocument> read_raw_documents_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    return read_raw_documents(in);
}

void write_manuals(std::ostream& out, std::span<const Manual> manuals) {
    for (const Manual& m : manuals) {
        nlohmann::json sections = nlohmann::json::array();
        for (const Section& s : m.sections) {
            nlohmann::json sentences = nlohmann::json::array();
            for (const Sentence& sent : s.sentences) sentences.push_back(sent.text);
            sections.push_back({{"section_id", s.section_id},
                                {"title", s.title},
                                {"sentences", sentences},
                                {"paragraph_count", s.paragraph_count}});
        }
        out << nlohmann::json{{"manual_id", m.manual_id}, {"sections", sections}}.dump()
            << '\n';
    }
}

void write_manuals_file(const std::string& path, std::span<const Manual> manuals) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write segmented corpus: " + path);
    write_manuals(out, manuals);
}

std::vector<Manual> read_manuals(std::istream& in) {
    std::vector<Manual> manuals;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("segmented corpus line " + std::to_string(line_no) +
                                     ": invalid JSON: " + e.what());
        }
        Manual m;
        m.manual_id = j.at("manual_id").get<std::string>();
        for (const auto& js : j.at("sections")) {
            Section s;
            s.section_id = js.at("section_id").get<std::string>();
            s.title = js.at("title").get<std::string>();
            if (js.contains("paragraph_count")) {
                s.paragraph_count = js.at("paragraph_count").get<std::size_t>();
            }
            for (const auto& jt : js.at("sentences")) {
                Sentence sent;
                sent.index = s.sentences.size();
                sent.text = jt.get<std::string>();
                sent.token_count = count_words(sent.text);
                s.sentences.push_back(std::move(sent));
            }
            m.sections.push_back(std::move(s));
        }
        manuals.push_back(std::move(m));
    }
    return manuals;
}

std::vector<Manual> read_manuals_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open segmented corpus: " + path);
    return read_manuals(in);
}

std::string corpus_stats_csv(const CorpusStats& stats) {
    std::ostringstream out;
    out << "property,value\n";
    out << "n_manuals," << stats.n_manuals << '\n';
    out << "n_paragraphs," << stats.n_paragraphs << '\n';
    out << "sentences_per_paragraph," << stats.sentences_per_paragraph << '\n';
    out << "words_per_sentence," << stats.words_per_sentence << '\n';
    out << "total_words," << stats.total_words << '\n';
    return out.str();
}

}  // namespace manualqa
