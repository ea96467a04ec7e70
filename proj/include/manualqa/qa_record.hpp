#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace manualqa {

enum class QuestionType { kFactual, kProcedural, kLocation, kOther };

std::string to_string(QuestionType type);
QuestionType question_type_from_string(std::string_view name);

struct QARecord {
    std::string qid;
    std::string question;
    QuestionType qtype = QuestionType::kOther;
    std::string paraphrase_group;
    std::string manual_id;
    std::string gold_section_id;
    std::vector<std::size_t> answer_sentence_indices;  // sorted, non-empty
    std::string answer_text;  // gold sentences joined by single spaces
    std::vector<std::string> extra_references;  // optional alternate ground truths
};

}  // namespace manualqa
