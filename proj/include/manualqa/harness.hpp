#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "manualqa/corpus.hpp"
#include "manualqa/metrics.hpp"
#include "manualqa/mtl.hpp"
#include "manualqa/pretrain.hpp"
#include "manualqa/qa_record.hpp"
#include "manualqa/retrieval.hpp"

namespace manualqa {

struct ExperimentConfig {
    std::string corpus_path;
    std::string qa_path;
    std::string embeddings_path;  // optional; S+WMS reports 0 without it
    std::string out_dir = "out";
    std::string experiment_name = "exp";

    std::string retrieval_method = "tfidf";
    bool expand = false;
    std::size_t questions_per_section = 3;
    std::size_t k = 10;

    std::string pretrain_strategy = "EWC_LRD";  // SLR | LRD | EWC | EWC_LRD | none
    double ewc_lambda = 0.1;
    std::size_t fisher_samples = 8;
    std::size_t pretrain_batch = 64;
    std::size_t pretrain_epochs = 1;
    double slr_lr = 5e-5;
    double lrd_head_lr = 5e-4;
    double lrd_factor = 2.6;
    double mask_prob = 0.15;

    std::size_t hidden_dim = 32;
    std::size_t n_blocks = 2;
    std::size_t n_heads = 2;
    std::size_t max_len = 128;

    std::string train_mode = "mtl";  // mtl | sqp
    std::string ar_mode = "sentence";
    std::size_t train_batch = 32;
    std::size_t patience = 5;
    std::size_t max_epochs = 200;
    double lr = 0.08;
    double threshold = 0.5;

    std::array<double, 3> split_ratios = {0.7, 0.2, 0.1};

    std::uint64_t seed_pretrain = 1;
    std::uint64_t seed_train = 2;
    std::uint64_t seed_split = 3;
};

// Config files use dotted TOML keys ("train.batch = 32", optionally grouped
// under "[train]" sections); any key can also be set through set_config_key,
// which is what the CLI flag overrides go through.
ExperimentConfig load_experiment_config(const std::string& path);
void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// --- dataset ------------------------------------------------------------------

// JSONL, one QARecord per line with the QARecord field names. Malformed lines
// and intra-record invariant violations raise errors naming the line / qid.
std::vector<QARecord> load_qa_dataset(const std::string& path);
std::vector<QARecord> read_qa_records(std::istream& in);
void write_qa_dataset(const std::string& path, std::span<const QARecord> records);

// Cross-checks records against the segmented corpus: the manual and gold
// section exist, sentence indices are in range, and answer_text matches the
// indexed sentences.
void validate_against_corpus(std::span<const QARecord> records,
                             std::span<const Manual> manuals);

struct DatasetSplit {
    std::vector<QARecord> train;
    std::vector<QARecord> validation;
    std::vector<QARecord> test;
};

// Paraphrase groups are shuffled by seed and greedily assigned to the split
// with the largest remaining group deficit, so no group ever spans two splits
// and per-split group counts stay within one group of the targets.
DatasetSplit split_dataset(std::span<const QARecord> records,
                           const std::array<double, 3>& ratios, std::uint64_t seed);

struct DatasetStats {
    std::size_t n_records = 0;
    double pct_factual = 0.0;
    double pct_procedural = 0.0;
    double pct_location = 0.0;
    double pct_paraphrased = 0.0;
    double avg_question_tokens = 0.0;
    double avg_answer_tokens = 0.0;
    std::vector<std::pair<std::string, std::size_t>> prefix_histogram;  // first three tokens
};

DatasetStats dataset_stats(std::span<const QARecord> records);
std::string dataset_stats_csv(const DatasetStats& stats);

// --- experiment pipeline -------------------------------------------------------

// ingest -> index -> pretrain -> split -> train -> infer (test split) -> eval.
// Artifacts land under <out_dir>/<experiment_name>/ together with
// manifest.json (config, seeds, content hashes of inputs) and a stage log;
// re-running with the same config resumes after the last completed stage.
MetricReport run_experiment(const ExperimentConfig& cfg);

// git-style blob hash of a file's contents
std::string file_sha1(const std::string& path);

// Renders a simple CSV as a markdown table (the `report` command).
std::string csv_to_markdown(const std::string& csv);

std::string hits_csv(const std::unordered_map<std::size_t, double>& hits);

}  // namespace manualqa
