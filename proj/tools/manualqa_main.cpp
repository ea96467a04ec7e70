// Command-line front end: corpus ingestion, statistics, retrieval indexes,
// pretraining, fine-tuning, inference, evaluation, and experiment runs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "manualqa/harness.hpp"

using namespace manualqa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<Manual> load_corpus(const std::string& path) {
    // accepts either raw-block or already-segmented corpora
    std::ifstream probe(path);
    if (!probe) throw std::runtime_error("cannot open corpus: " + path);
    std::string first_line;
    std::getline(probe, first_line);
    probe.close();
    if (first_line.find("\"sections\"") != std::string::npos) {
        return read_manuals_file(path);
    }
    std::vector<Manual> manuals;
    for (const RawDocument& doc : read_raw_documents_file(path)) {
        manuals.push_back(segment(doc));
    }
    return manuals;
}

const Manual& manual_by_id(const std::vector<Manual>& manuals, const std::string& id) {
    for (const Manual& m : manuals) {
        if (m.manual_id == id) return m;
    }
    throw std::runtime_error("manual '" + id + "' not found in the corpus");
}

RetrievalIndex build_manual_index(const Manual& manual, const std::string& method,
                                  bool expand, std::size_t questions_per_section,
                                  std::size_t k, const EmbeddingTable* embeddings) {
    TemplateQuestionGenerator qgen(TemplateQuestionGenerator::idf_over(manual.sections));
    ExpansionConfig expansion{&qgen, questions_per_section};
    return build_index(manual.sections, retrieval_method_from_string(method), embeddings,
                       expand ? &expansion : nullptr, k);
}

// model directory written by `train`: either mtl/ or sr/ + ar/
struct LoadedModels {
    std::vector<MTLModel> storage;
    const MTLModel* sr = nullptr;
    const MTLModel* ar = nullptr;
};

LoadedModels load_models(const std::string& dir) {
    LoadedModels models;
    if (fs::exists(dir + "/mtl")) {
        models.storage.push_back(load_mtl_model(dir + "/mtl"));
        models.sr = models.ar = &models.storage[0];
    } else if (fs::exists(dir + "/sr") && fs::exists(dir + "/ar")) {
        models.storage.push_back(load_mtl_model(dir + "/sr"));
        models.storage.push_back(load_mtl_model(dir + "/ar"));
        models.sr = &models.storage[0];
        models.ar = &models.storage[1];
    } else if (fs::exists(dir + "/encoder")) {
        models.storage.push_back(load_mtl_model(dir));
        models.sr = models.ar = &models.storage[0];
    } else {
        throw std::runtime_error("no trained model found under " + dir);
    }
    return models;
}

json inference_result_json(const InferenceResult& result) {
    json sr_scores = json::array();
    for (const auto& [id, score] : result.sr_scores) {
        sr_scores.push_back({{"section_id", id}, {"score", score}});
    }
    return json{{"predicted_section_id", result.predicted_section_id},
                {"sr_scores", sr_scores},
                {"selected_units", result.selected_units},
                {"answer_text", result.answer_text},
                {"mode", to_string(result.mode)}};
}

// aggregate rows of a metric report CSV -> table-style markdown
std::string metrics_csv_markdown(const std::string& path, const std::string& model_id) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics csv: " + path);
    std::ostringstream out;
    out << "| MODEL | GT | EM | P | R | F1 | S+WMS |\n";
    out << "|---|---|---|---|---|---|---|\n";
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7 || cells[1] != "aggregate") continue;
        out << "| " << model_id << " | " << cells[0] << " | " << cells[2] << " | "
            << cells[3] << " | " << cells[4] << " | " << cells[5] << " | " << cells[6]
            << " |\n";
    }
    return out.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"question answering over instructional manuals"};
    app.require_subcommand(1);

    // ---- ingest ----
    auto* ingest = app.add_subcommand("ingest", "clean and segment raw manual blocks");
    std::string ingest_input;
    std::string ingest_out;
    bool no_toc_filter = false;
    ingest->add_option("--input", ingest_input, "raw corpus jsonl")->required();
    ingest->add_option("--out", ingest_out, "segmented corpus jsonl")->required();
    ingest->add_flag("--no-toc-filter", no_toc_filter, "keep table-of-contents blocks");

    // ---- stats ----
    auto* stats_cmd = app.add_subcommand("stats", "corpus and dataset statistics as CSV");
    std::string stats_corpus;
    std::string stats_qa;
    stats_cmd->add_option("--corpus", stats_corpus, "segmented or raw corpus jsonl");
    stats_cmd->add_option("--qa", stats_qa, "qa dataset jsonl");

    // ---- index ----
    auto* index_cmd = app.add_subcommand("index", "build and persist a retrieval index");
    std::string index_corpus;
    std::string index_manual;
    std::string index_method = "tfidf";
    std::string index_embeddings;
    std::string index_out;
    bool index_expand = false;
    std::size_t index_m = 3;
    std::size_t index_k = 10;
    index_cmd->add_option("--corpus", index_corpus, "corpus jsonl")->required();
    index_cmd->add_option("--manual", index_manual, "manual id (default: sole manual)");
    index_cmd->add_option("--method", index_method,
                          "tfidf | jaccard | countvec | avg_embedding");
    index_cmd->add_flag("--expand", index_expand, "append generated questions before indexing");
    index_cmd->add_option("--questions-per-section", index_m, "questions per section");
    index_cmd->add_option("--k", index_k, "default K stored with the index");
    index_cmd->add_option("--embeddings", index_embeddings, "embedding table (avg_embedding)");
    index_cmd->add_option("--out", index_out, "output directory")->required();

    // ---- retrieve ----
    auto* retrieve_cmd = app.add_subcommand("retrieve", "rank sections for a question");
    std::string retrieve_index;
    std::string retrieve_question;
    std::string retrieve_method;
    bool retrieve_expand = false;
    std::size_t retrieve_k = 0;
    retrieve_cmd->add_option("--index-path", retrieve_index, "persisted index directory")
        ->required();
    retrieve_cmd->add_option("--question", retrieve_question, "query text")->required();
    retrieve_cmd->add_option("--k", retrieve_k, "top K (default: the index's K)");
    retrieve_cmd->add_option("--method", retrieve_method,
                             "expected method; fails when the index differs");
    retrieve_cmd->add_flag("--expand", retrieve_expand,
                           "expected expansion flag; fails when the index differs");

    // ---- pretrain ----
    auto* pretrain_cmd = app.add_subcommand("pretrain", "masked-LM domain pretraining");
    std::string pre_corpus;
    std::string pre_anchor;
    std::string pre_strategy = "EWC_LRD";
    std::string pre_out;
    double pre_lambda = 0.1;
    std::size_t pre_fisher = 8;
    std::uint64_t pre_seed = 1;
    std::size_t pre_batch = 64;
    std::size_t pre_epochs = 1;
    double pre_mask = 0.15;
    std::size_t pre_d = 32;
    std::size_t pre_blocks = 2;
    std::size_t pre_heads = 2;
    std::size_t pre_maxlen = 128;
    pretrain_cmd->add_option("--corpus", pre_corpus, "corpus jsonl")->required();
    pretrain_cmd->add_option("--strategy", pre_strategy, "SLR | LRD | EWC | EWC_LRD");
    pretrain_cmd->add_option("--ewc-lambda", pre_lambda, "consolidation weight");
    pretrain_cmd->add_option("--fisher-samples", pre_fisher, "batches for the Fisher estimate");
    pretrain_cmd->add_option("--seed", pre_seed, "seed");
    pretrain_cmd->add_option("--out", pre_out, "checkpoint directory")->required();
    pretrain_cmd->add_option("--anchor", pre_anchor, "generic-text corpus for the anchor");
    pretrain_cmd->add_option("--batch", pre_batch, "batch size");
    pretrain_cmd->add_option("--epochs", pre_epochs, "epochs");
    pretrain_cmd->add_option("--mask-prob", pre_mask, "masking probability");
    pretrain_cmd->add_option("--hidden-dim", pre_d, "encoder width");
    pretrain_cmd->add_option("--blocks", pre_blocks, "attention blocks");
    pretrain_cmd->add_option("--heads", pre_heads, "attention heads");
    pretrain_cmd->add_option("--max-len", pre_maxlen, "maximum sequence length");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "fine-tune the SR/AR model(s)");
    std::string train_mode = "mtl";
    std::string train_ar = "sentence";
    std::string train_pretrained;
    std::string train_corpus;
    std::string train_qa;
    std::string train_out;
    std::string train_method = "tfidf";
    bool train_expand = false;
    std::size_t train_k = 10;
    std::size_t train_batch = 32;
    std::size_t train_patience = 5;
    std::size_t train_max_epochs = 200;
    double train_lr = 0.005;
    double train_threshold = 0.5;
    std::uint64_t train_seed = 2;
    std::uint64_t train_split_seed = 3;
    train_cmd->add_option("--mode", train_mode, "mtl | sqp");
    train_cmd->add_option("--ar", train_ar, "sentence | token");
    train_cmd->add_option("--k", train_k, "candidate sections per question");
    train_cmd->add_option("--batch", train_batch, "batch size");
    train_cmd->add_option("--patience", train_patience, "non-improving checks allowed");
    train_cmd->add_option("--seed", train_seed, "training seed");
    train_cmd->add_option("--pretrained", train_pretrained, "pretraining checkpoint")
        ->required();
    train_cmd->add_option("--corpus", train_corpus, "corpus jsonl")->required();
    train_cmd->add_option("--qa", train_qa, "qa dataset jsonl")->required();
    train_cmd->add_option("--out", train_out, "model output directory")->required();
    train_cmd->add_option("--method", train_method, "retrieval method for candidates");
    train_cmd->add_flag("--expand", train_expand, "expand sections before indexing");
    train_cmd->add_option("--max-epochs", train_max_epochs, "epoch cap");
    train_cmd->add_option("--lr", train_lr, "learning rate");
    train_cmd->add_option("--threshold", train_threshold, "answer-unit threshold");
    train_cmd->add_option("--split-seed", train_split_seed, "train/validation split seed");

    // ---- infer ----
    auto* infer_cmd = app.add_subcommand("infer", "answer one question");
    std::string infer_question;
    std::string infer_manual;
    std::string infer_model;
    std::string infer_corpus;
    std::string infer_method = "tfidf";
    std::string infer_ar = "sentence";
    bool infer_expand = false;
    double infer_threshold = 0.5;
    std::size_t infer_k = 10;
    infer_cmd->add_option("--question", infer_question, "question text")->required();
    infer_cmd->add_option("--manual", infer_manual, "manual id (default: sole manual)");
    infer_cmd->add_option("--threshold", infer_threshold, "answer-unit threshold");
    infer_cmd->add_option("--model", infer_model, "trained model directory")->required();
    infer_cmd->add_option("--corpus", infer_corpus, "corpus jsonl")->required();
    infer_cmd->add_option("--k", infer_k, "candidate sections");
    infer_cmd->add_option("--ar", infer_ar, "sentence | token");
    infer_cmd->add_option("--method", infer_method, "retrieval method");
    infer_cmd->add_flag("--expand", infer_expand, "expand sections before indexing");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against the dataset");
    std::string eval_predictions;
    std::string eval_qa;
    std::string eval_embeddings;
    std::string eval_out;
    std::string eval_model_id = "model";
    eval_cmd->add_option("--predictions", eval_predictions, "predictions jsonl")->required();
    eval_cmd->add_option("--qa", eval_qa, "qa dataset jsonl")->required();
    eval_cmd->add_option("--embeddings", eval_embeddings, "embedding table for S+WMS");
    eval_cmd->add_option("--out", eval_out, "directory for report.csv / report.md");
    eval_cmd->add_option("--model-id", eval_model_id, "label used in the report");

    // ---- neighbors ----
    auto* neighbors_cmd = app.add_subcommand("neighbors", "nearest neighbors of probe words");
    std::string nn_words;
    std::string nn_checkpoint;
    std::string nn_probe;
    std::size_t nn_k = 5;
    neighbors_cmd->add_option("--words", nn_words, "file with one word per line")->required();
    neighbors_cmd->add_option("--k", nn_k, "neighbors per word");
    neighbors_cmd->add_option("--checkpoint", nn_checkpoint, "encoder checkpoint")->required();
    neighbors_cmd->add_option("--probe", nn_probe, "corpus jsonl of probe contexts")
        ->required();

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "render artifact CSVs as markdown");
    std::string report_metrics;
    std::string report_model_id = "model";
    std::vector<std::string> report_csvs;
    report_cmd->add_option("--metrics", report_metrics, "metric report CSV");
    report_cmd->add_option("--model-id", report_model_id, "label for the metrics table");
    report_cmd->add_option("--csv", report_csvs, "generic CSV files (stats, hits)");

    // ---- run ----
    auto* run_cmd = app.add_subcommand("run", "full experiment pipeline from a config");
    std::string run_config;
    std::vector<std::string> run_sets;
    run_cmd->add_option("--config", run_config, "TOML config file");
    run_cmd->add_option("--set", run_sets, "override, e.g. --set train.mode=sqp");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            SegmentOptions options;
            options.toc_filter = !no_toc_filter;
            std::vector<Manual> manuals;
            for (const RawDocument& doc : read_raw_documents_file(ingest_input)) {
                manuals.push_back(segment(doc, options));
            }
            write_manuals_file(ingest_out, manuals);
            std::cout << "segmented " << manuals.size() << " manuals -> " << ingest_out
                      << "\n";
        } else if (*stats_cmd) {
            if (stats_corpus.empty() && stats_qa.empty()) {
                throw std::runtime_error("stats: pass --corpus and/or --qa");
            }
            if (!stats_corpus.empty()) {
                const auto manuals = load_corpus(stats_corpus);
                std::cout << corpus_stats_csv(corpus_stats(manuals));
            }
            if (!stats_qa.empty()) {
                const auto records = load_qa_dataset(stats_qa);
                std::cout << dataset_stats_csv(dataset_stats(records));
            }
        } else if (*index_cmd) {
            const auto manuals = load_corpus(index_corpus);
            if (index_manual.empty() && manuals.size() == 1) {
                index_manual = manuals[0].manual_id;
            }
            if (index_manual.empty()) {
                throw std::runtime_error("index: --manual required for multi-manual corpora");
            }
            EmbeddingTable table;
            const EmbeddingTable* table_ptr = nullptr;
            if (!index_embeddings.empty()) {
                table = read_embeddings_file(index_embeddings);
                table_ptr = &table;
            }
            const RetrievalIndex index =
                build_manual_index(manual_by_id(manuals, index_manual), index_method,
                                   index_expand, index_m, index_k, table_ptr);
            save_index(index_out, index);
            std::cout << "indexed " << index.section_ids.size() << " sections ("
                      << index_method << (index.expanded ? ", expanded" : "") << ") -> "
                      << index_out << "\n";
        } else if (*retrieve_cmd) {
            const RetrievalIndex index = load_index(retrieve_index);
            if (!retrieve_method.empty() && retrieve_method != to_string(index.method)) {
                throw std::runtime_error("retrieve: index method is " +
                                         to_string(index.method) + ", not " + retrieve_method);
            }
            if (retrieve_cmd->count("--expand") > 0 && retrieve_expand != index.expanded) {
                throw std::runtime_error("retrieve: index expansion flag differs");
            }
            const std::size_t k = retrieve_k == 0 ? index.k_default : retrieve_k;
            const RankedList ranked = top_k(retrieve_question, index, k);
            json out = json::array();
            for (const RankedEntry& e : ranked.entries) {
                out.push_back({{"section_id", e.section_id}, {"score", e.score}});
            }
            std::cout << out.dump(2) << "\n";
        } else if (*pretrain_cmd) {
            const auto manuals = load_corpus(pre_corpus);
            std::vector<std::string> sentences;
            for (const Manual& m : manuals) {
                for (const Section& s : m.sections) {
                    if (!s.title.empty()) sentences.push_back(s.title);
                    for (const Sentence& sent : s.sentences) sentences.push_back(sent.text);
                }
            }
            const Vocabulary vocab = Vocabulary::build(sentences);
            EncoderConfig arch;
            arch.vocab_size = vocab.size();
            arch.hidden_dim = pre_d;
            arch.n_blocks = pre_blocks;
            arch.n_heads = pre_heads;
            arch.max_len = pre_maxlen;
            LayeredEncoder encoder(arch, pre_seed);

            PretrainConfig cfg;
            cfg.strategy = pretrain_strategy_from_string(pre_strategy);
            cfg.ewc_lambda = pre_lambda;
            cfg.fisher_samples = pre_fisher;
            cfg.seed = pre_seed;
            cfg.batch_size = pre_batch;
            cfg.epochs = pre_epochs;
            cfg.mask_prob = pre_mask;
            const auto sequences = prepare_sequences(sentences, vocab, arch.max_len);

            std::vector<std::vector<int>> anchor;
            if (!pre_anchor.empty()) {
                std::vector<std::string> anchor_sentences;
                for (const Manual& m : load_corpus(pre_anchor)) {
                    for (const Section& s : m.sections) {
                        for (const Sentence& sent : s.sentences) {
                            anchor_sentences.push_back(sent.text);
                        }
                    }
                }
                anchor = prepare_sequences(anchor_sentences, vocab, arch.max_len);
            }
            const PretrainStats stats = pretrain(encoder, sequences, cfg, anchor);

            CheckpointMeta meta;
            meta.strategy = pre_strategy;
            meta.seed = pre_seed;
            meta.steps = stats.steps;
            save_checkpoint(pre_out, encoder, vocab, meta);
            std::cout << "pretrained " << stats.steps << " steps (" << pre_strategy
                      << "), loss " << stats.first_batch_loss << " -> "
                      << stats.last_batch_loss << ", checkpoint -> " << pre_out << "\n";
        } else if (*train_cmd) {
            const auto manuals = load_corpus(train_corpus);
            const auto records = load_qa_dataset(train_qa);
            validate_against_corpus(records, manuals);

            std::vector<RetrievalIndex> indexes;
            indexes.reserve(manuals.size());
            RetrievalContext ctx;
            for (const Manual& m : manuals) {
                indexes.push_back(
                    build_manual_index(m, train_method, train_expand, 3, train_k, nullptr));
                ctx.manuals[m.manual_id] = &m;
            }
            for (std::size_t i = 0; i < manuals.size(); ++i) {
                ctx.indexes[manuals[i].manual_id] = &indexes[i];
            }

            const DatasetSplit split = split_dataset(records, {0.7, 0.2, 0.1},
                                                     train_split_seed);
            Checkpoint ckpt = load_checkpoint(train_pretrained);
            TrainConfig cfg;
            cfg.mode = train_mode == "sqp" ? TrainMode::kSqp : TrainMode::kMtl;
            cfg.ar_mode = ar_mode_from_string(train_ar);
            cfg.k = train_k;
            cfg.batch_size = train_batch;
            cfg.patience = train_patience;
            cfg.max_epochs = train_max_epochs;
            cfg.lr = train_lr;
            cfg.threshold = train_threshold;
            cfg.seed = train_seed;

            if (cfg.mode == TrainMode::kMtl) {
                MTLModel model(ckpt.encoder, ckpt.vocab, train_seed);
                const TrainStats stats =
                    train_mtl(model, split.train, split.validation, ctx, cfg);
                save_mtl_model(train_out + "/mtl", model);
                std::cout << "trained mtl for " << stats.epochs_run << " epochs, best val "
                          << stats.best_val_loss << " -> " << train_out << "/mtl\n";
            } else {
                TrainStats sr_stats;
                TrainStats ar_stats;
                const SqpModels models = train_sqp(ckpt.encoder, ckpt.vocab, split.train,
                                                   split.validation, ctx, cfg, &sr_stats,
                                                   &ar_stats);
                save_mtl_model(train_out + "/sr", models.sr);
                save_mtl_model(train_out + "/ar", models.ar);
                std::cout << "trained sqp (sr " << sr_stats.epochs_run << " epochs, ar "
                          << ar_stats.epochs_run << " epochs) -> " << train_out << "\n";
            }
        } else if (*infer_cmd) {
            const auto manuals = load_corpus(infer_corpus);
            if (infer_manual.empty() && manuals.size() == 1) {
                infer_manual = manuals[0].manual_id;
            }
            const Manual& manual = manual_by_id(manuals, infer_manual);
            const RetrievalIndex index =
                build_manual_index(manual, infer_method, infer_expand, 3, infer_k, nullptr);
            const LoadedModels models = load_models(infer_model);
            const InferenceResult result =
                infer(infer_question, manual, index, *models.sr, *models.ar, infer_k,
                      ar_mode_from_string(infer_ar), infer_threshold);
            std::cout << inference_result_json(result).dump(2) << "\n";
        } else if (*eval_cmd) {
            const auto records = load_qa_dataset(eval_qa);
            std::unordered_map<std::string, std::string> predictions;
            std::ifstream in(eval_predictions);
            if (!in) throw std::runtime_error("cannot open predictions: " + eval_predictions);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const json j = json::parse(line);
                predictions[j.at("qid").get<std::string>()] =
                    j.at("answer").get<std::string>();
            }
            EmbeddingTable table;
            const EmbeddingTable* table_ptr = nullptr;
            if (!eval_embeddings.empty()) {
                table = read_embeddings_file(eval_embeddings);
                table_ptr = &table;
            }
            const MetricReport report =
                evaluate_predictions(records, predictions, table_ptr, eval_model_id);
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                std::ofstream csv(eval_out + "/report.csv");
                csv << metric_report_csv(report);
                std::ofstream md(eval_out + "/report.md");
                md << metric_report_markdown(report);
            }
            std::cout << metric_report_markdown(report);
        } else if (*neighbors_cmd) {
            Checkpoint ckpt = load_checkpoint(nn_checkpoint);
            std::ifstream words_in(nn_words);
            if (!words_in) throw std::runtime_error("cannot open words file: " + nn_words);
            std::vector<std::string> words;
            std::string word;
            while (words_in >> word) words.push_back(word);

            std::vector<std::string> probes;
            for (const Manual& m : load_corpus(nn_probe)) {
                for (const Section& s : m.sections) {
                    for (const Sentence& sent : s.sentences) probes.push_back(sent.text);
                }
            }
            const auto result = nearest_neighbors(words, ckpt.encoder, ckpt.vocab, probes,
                                                  nn_k);
            std::cout << "| word | nearest neighbors |\n|---|---|\n";
            for (const auto& [w, neighbors] : result) {
                std::cout << "| " << w << " | ";
                for (std::size_t i = 0; i < neighbors.size(); ++i) {
                    if (i > 0) std::cout << ", ";
                    std::cout << neighbors[i];
                }
                std::cout << " |\n";
            }
        } else if (*report_cmd) {
            if (report_metrics.empty() && report_csvs.empty()) {
                throw std::runtime_error("report: pass --metrics and/or --csv");
            }
            if (!report_metrics.empty()) {
                std::cout << metrics_csv_markdown(report_metrics, report_model_id) << "\n";
            }
            for (const std::string& path : report_csvs) {
                std::ifstream in(path);
                if (!in) throw std::runtime_error("cannot open csv: " + path);
                std::ostringstream ss;
                ss << in.rdbuf();
                std::cout << csv_to_markdown(ss.str()) << "\n";
            }
        } else if (*run_cmd) {
            ExperimentConfig cfg;
            if (!run_config.empty()) cfg = load_experiment_config(run_config);
            for (const std::string& kv : run_sets) {
                const std::size_t eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw std::runtime_error("run: --set expects key=value, got '" + kv + "'");
                }
                set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            const MetricReport report = run_experiment(cfg);
            std::cout << metric_report_markdown(report);
            std::cout << "artifacts under " << cfg.out_dir << "/" << cfg.experiment_name
                      << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
