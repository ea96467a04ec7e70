#pragma once

// Deterministic toy corpora, QA datasets, and embedding tables used across
// the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "manualqa/corpus.hpp"
#include "manualqa/embedding.hpp"
#include "manualqa/qa_record.hpp"
#include "manualqa/retrieval.hpp"
#include "manualqa/rng.hpp"

namespace testsupport {

inline manualqa::Section make_section(std::string id, std::string title,
                                      std::vector<std::string> sentence_texts) {
    manualqa::Section section;
    section.section_id = std::move(id);
    section.title = std::move(title);
    section.paragraph_count = 1;
    for (auto& text : sentence_texts) {
        manualqa::Sentence s;
        s.index = section.sentences.size();
        s.token_count = manualqa::tokenize(text).size();
        if (s.token_count == 0) s.token_count = 1;
        s.text = std::move(text);
        section.sentences.push_back(std::move(s));
    }
    return section;
}

// a small device manual: every section has a distinctive topic word
inline manualqa::Manual toy_manual(const std::string& manual_id = "m0") {
    manualqa::Manual m;
    m.manual_id = manual_id;
    m.sections.push_back(make_section(
        "s000", "Battery",
        {"Charge the battery with the supplied charger.",
         "The battery indicator turns green when charging completes."}));
    m.sections.push_back(make_section(
        "s001", "Display",
        {"Adjust the display brightness from the settings menu.",
         "The display dims automatically to save power."}));
    m.sections.push_back(make_section(
        "s002", "Network",
        {"Connect the device to a wireless network before streaming.",
         "Enter the network password when prompted.",
         "Restart the router if the network connection drops."}));
    m.sections.push_back(make_section(
        "s003", "Sound",
        {"Press the volume button to change the sound level.",
         "Mute the sound by holding the volume button down."}));
    m.sections.push_back(make_section(
        "s004", "Cleaning",
        {"Wipe the screen with a soft dry cloth.",
         "Never spray liquid cleaner directly on the device."}));
    return m;
}

// marker-token corpus: section i contains the unique token markerNNN
inline manualqa::Manual marker_manual(std::size_t n_sections,
                                      const std::string& manual_id = "mk") {
    manualqa::Manual m;
    m.manual_id = manual_id;
    for (std::size_t i = 0; i < n_sections; ++i) {
        char id[24];
        std::snprintf(id, sizeof(id), "s%03zu", i);
        const std::string marker = "marker" + std::to_string(100 + i);
        m.sections.push_back(make_section(
            id, "",
            {"This section explains the " + marker + " feature in detail.",
             "Follow the " + marker + " setup steps given here."}));
    }
    return m;
}

// separable QA fixture: n_sections sections with three distinctive sentences
// each, two questions per section (one with a non-contiguous answer)
struct OverfitFixture {
    manualqa::Manual manual;
    std::vector<manualqa::QARecord> records;
};

inline OverfitFixture overfit_fixture(std::size_t n_sections) {
    OverfitFixture fx;
    fx.manual.manual_id = "fit";
    for (std::size_t i = 0; i < n_sections; ++i) {
        char id[24];
        std::snprintf(id, sizeof(id), "s%03zu", i);
        const std::string marker = "marker" + std::to_string(100 + i);
        fx.manual.sections.push_back(make_section(
            id, "",
            {"Press the " + marker + " button to begin.",
             "Hold the " + marker + " switch for five seconds.",
             "The " + marker + " light turns blue when ready."}));

        const manualqa::Section& section = fx.manual.sections.back();
        auto add_record = [&](const std::string& question,
                              std::vector<std::size_t> indices) {
            manualqa::QARecord r;
            r.qid = "q" + std::to_string(fx.records.size());
            r.question = question;
            r.qtype = manualqa::QuestionType::kProcedural;
            r.paraphrase_group = "g" + std::to_string(fx.records.size());
            r.manual_id = fx.manual.manual_id;
            r.gold_section_id = section.section_id;
            r.answer_sentence_indices = std::move(indices);
            for (std::size_t idx : r.answer_sentence_indices) {
                if (!r.answer_text.empty()) r.answer_text.push_back(' ');
                r.answer_text += section.sentences[idx].text;
            }
            fx.records.push_back(std::move(r));
        };
        add_record("how do i start " + marker + "?", {0});
        add_record("when is " + marker + " ready to use?", {0, 2});
    }
    return fx;
}

inline std::string question_for(const manualqa::Section& section) {
    return "how do i use the " + manualqa::tokenize(section.title).front() + "?";
}

// QA records over toy_manual(): one per section, answer = chosen sentences
inline std::vector<manualqa::QARecord> toy_records(const manualqa::Manual& manual) {
    std::vector<manualqa::QARecord> records;
    const std::vector<std::vector<std::size_t>> picks{{0}, {1}, {0, 2}, {0}, {1}};
    for (std::size_t i = 0; i < manual.sections.size(); ++i) {
        const manualqa::Section& section = manual.sections[i];
        manualqa::QARecord r;
        r.qid = "q" + std::to_string(i);
        r.question = question_for(section);
        r.qtype = manualqa::QuestionType::kProcedural;
        r.paraphrase_group = "g" + std::to_string(i);
        r.manual_id = manual.manual_id;
        r.gold_section_id = section.section_id;
        for (std::size_t idx : picks[i % picks.size()]) {
            if (idx < section.sentences.size()) r.answer_sentence_indices.push_back(idx);
        }
        for (std::size_t idx : r.answer_sentence_indices) {
            if (!r.answer_text.empty()) r.answer_text.push_back(' ');
            r.answer_text += section.sentences[idx].text;
        }
        records.push_back(std::move(r));
    }
    return records;
}

// deterministic word vectors over the given texts' vocabulary
inline manualqa::EmbeddingTable toy_embeddings(const std::vector<std::string>& texts,
                                               std::size_t dimension = 8,
                                               std::uint64_t seed = 17) {
    manualqa::EmbeddingTable table;
    table.dimension = dimension;
    for (const auto& text : texts) {
        for (const auto& token : manualqa::tokenize(text)) {
            if (table.vectors.count(token)) continue;
            // per-token generator keyed by the token, so the table does not
            // depend on insertion order
            std::uint64_t key = seed;
            for (unsigned char c : token) key = key * 1099511628211ULL + c;
            manualqa::Rng rng(key);
            std::vector<double> vec(dimension);
            for (double& v : vec) v = rng.normal();
            table.vectors[token] = std::move(vec);
        }
    }
    return table;
}

}  // namespace testsupport
