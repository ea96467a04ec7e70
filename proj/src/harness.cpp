#include "manualqa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "manualqa/detail/sha1.hpp"

namespace manualqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string strip_comment(const std::string& line) {
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_quotes = !in_quotes;
        if (line[i] == '#' && !in_quotes) return line.substr(0, i);
    }
    return line;
}

std::string unquote(std::string value) {
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        return value.substr(1, value.size() - 2);
    }
    return value;
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" +
                                value + "'");
}

std::string sanitize_id(std::string_view id) {
    std::string out;
    for (char c : id) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    }
    return out.empty() ? "_" : out;
}

std::string join_tokens(std::span<const std::string> tokens, std::size_t count) {
    std::string out;
    for (std::size_t i = 0; i < std::min(count, tokens.size()); ++i) {
        if (!out.empty()) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

json config_json(const ExperimentConfig& cfg) {
    return json{{"corpus_path", cfg.corpus_path},
                {"qa_path", cfg.qa_path},
                {"embeddings_path", cfg.embeddings_path},
                {"out_dir", cfg.out_dir},
                {"experiment_name", cfg.experiment_name},
                {"retrieval_method", cfg.retrieval_method},
                {"expand", cfg.expand},
                {"questions_per_section", cfg.questions_per_section},
                {"k", cfg.k},
                {"pretrain_strategy", cfg.pretrain_strategy},
                {"ewc_lambda", cfg.ewc_lambda},
                {"fisher_samples", cfg.fisher_samples},
                {"pretrain_batch", cfg.pretrain_batch},
                {"pretrain_epochs", cfg.pretrain_epochs},
                {"slr_lr", cfg.slr_lr},
                {"lrd_head_lr", cfg.lrd_head_lr},
                {"lrd_factor", cfg.lrd_factor},
                {"mask_prob", cfg.mask_prob},
                {"hidden_dim", cfg.hidden_dim},
                {"n_blocks", cfg.n_blocks},
                {"n_heads", cfg.n_heads},
                {"max_len", cfg.max_len},
                {"train_mode", cfg.train_mode},
                {"ar_mode", cfg.ar_mode},
                {"train_batch", cfg.train_batch},
                {"patience", cfg.patience},
                {"max_epochs", cfg.max_epochs},
                {"lr", cfg.lr},
                {"threshold", cfg.threshold},
                {"split_ratios", cfg.split_ratios},
                {"seed_pretrain", cfg.seed_pretrain},
                {"seed_train", cfg.seed_train},
                {"seed_split", cfg.seed_split}};
}

// tracks which pipeline stages already completed for this exact config
class StageTracker {
public:
    StageTracker(std::string path, std::string config_hash)
        : path_(std::move(path)), config_hash_(std::move(config_hash)) {
        std::ifstream in(path_);
        if (!in) return;
        try {
            json j = json::parse(in);
            if (j.at("config_hash").get<std::string>() == config_hash_) {
                for (const auto& s : j.at("completed")) {
                    completed_.insert(s.get<std::string>());
                }
            }
        } catch (const std::exception&) {
            // unreadable tracker: start over
        }
    }

    bool done(const std::string& stage) const { return completed_.count(stage) > 0; }

    void mark(const std::string& stage) {
        completed_.insert(stage);
        json j{{"config_hash", config_hash_},
               {"completed", std::vector<std::string>(completed_.begin(), completed_.end())}};
        std::ofstream out(path_);
        out << j.dump(2) << '\n';
    }

private:
    std::string path_;
    std::string config_hash_;
    std::set<std::string> completed_;
};

}  // namespace

std::string to_string(QuestionType type) {
    switch (type) {
        case QuestionType::kFactual: return "factual";
        case QuestionType::kProcedural: return "procedural";
        case QuestionType::kLocation: return "location";
        case QuestionType::kOther: return "other";
    }
    return "other";
}

QuestionType question_type_from_string(std::string_view name) {
    if (name == "factual") return QuestionType::kFactual;
    if (name == "procedural") return QuestionType::kProcedural;
    if (name == "location") return QuestionType::kLocation;
    if (name == "other") return QuestionType::kOther;
    throw std::invalid_argument("unknown question type: " + std::string(name));
}

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };
    auto as_double = [&] { return std::stod(value); };

    if (key == "corpus.path") cfg.corpus_path = value;
    else if (key == "qa.path") cfg.qa_path = value;
    else if (key == "embeddings.path") cfg.embeddings_path = value;
    else if (key == "out.dir") cfg.out_dir = value;
    else if (key == "experiment.name") cfg.experiment_name = value;
    else if (key == "retrieval.method") cfg.retrieval_method = value;
    else if (key == "retrieval.expand") cfg.expand = parse_bool(value, key);
    else if (key == "retrieval.questions_per_section") cfg.questions_per_section = as_size();
    else if (key == "retrieval.k" || key == "k") cfg.k = as_size();
    else if (key == "pretrain.strategy") cfg.pretrain_strategy = value;
    else if (key == "pretrain.ewc_lambda") cfg.ewc_lambda = as_double();
    else if (key == "pretrain.fisher_samples") cfg.fisher_samples = as_size();
    else if (key == "pretrain.batch") cfg.pretrain_batch = as_size();
    else if (key == "pretrain.epochs") cfg.pretrain_epochs = as_size();
    else if (key == "pretrain.slr_lr") cfg.slr_lr = as_double();
    else if (key == "pretrain.lrd_head_lr") cfg.lrd_head_lr = as_double();
    else if (key == "pretrain.lrd_factor") cfg.lrd_factor = as_double();
    else if (key == "pretrain.mask_prob") cfg.mask_prob = as_double();
    else if (key == "encoder.hidden_dim") cfg.hidden_dim = as_size();
    else if (key == "encoder.blocks") cfg.n_blocks = as_size();
    else if (key == "encoder.heads") cfg.n_heads = as_size();
    else if (key == "encoder.max_len") cfg.max_len = as_size();
    else if (key == "train.mode") cfg.train_mode = value;
    else if (key == "train.ar") cfg.ar_mode = value;
    else if (key == "train.batch") cfg.train_batch = as_size();
    else if (key == "train.patience") cfg.patience = as_size();
    else if (key == "train.max_epochs") cfg.max_epochs = as_size();
    else if (key == "train.lr") cfg.lr = as_double();
    else if (key == "train.threshold") cfg.threshold = as_double();
    else if (key == "split.train") cfg.split_ratios[0] = as_double();
    else if (key == "split.val") cfg.split_ratios[1] = as_double();
    else if (key == "split.test") cfg.split_ratios[2] = as_double();
    else if (key == "seeds.pretrain") cfg.seed_pretrain = as_u64();
    else if (key == "seeds.train") cfg.seed_train = as_u64();
    else if (key == "seeds.split") cfg.seed_split = as_u64();
    else throw std::invalid_argument("unknown config key: " + key);
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);

    ExperimentConfig cfg;
    std::string line;
    std::string prefix;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(strip_comment(line));
        if (text.empty()) continue;
        if (text.front() == '[' && text.back() == ']') {
            prefix = trim(text.substr(1, text.size() - 2));
            if (!prefix.empty()) prefix.push_back('.');
            continue;
        }
        const std::size_t eq = text.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        }
        const std::string key = prefix + trim(text.substr(0, eq));
        const std::string value = unquote(trim(text.substr(eq + 1)));
        try {
            set_config_key(cfg, key, value);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

std::vector<QARecord> read_qa_records(std::istream& in) {
    std::vector<QARecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("qa dataset line " + std::to_string(line_no) +
                                     ": invalid JSON: " + e.what());
        }
        QARecord r;
        try {
            r.qid = j.at("qid").get<std::string>();
            r.question = j.at("question").get<std::string>();
            r.qtype = question_type_from_string(j.at("qtype").get<std::string>());
            r.paraphrase_group = j.at("paraphrase_group").get<std::string>();
            r.manual_id = j.at("manual_id").get<std::string>();
            r.gold_section_id = j.at("gold_section_id").get<std::string>();
            r.answer_sentence_indices =
                j.at("answer_sentence_indices").get<std::vector<std::size_t>>();
            r.answer_text = j.at("answer_text").get<std::string>();
            if (j.contains("extra_references")) {
                r.extra_references = j.at("extra_references").get<std::vector<std::string>>();
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("qa dataset line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
        if (r.qid.empty() || r.question.empty()) {
            throw std::runtime_error("qa dataset line " + std::to_string(line_no) +
                                     ": qid and question must be non-empty");
        }
        std::sort(r.answer_sentence_indices.begin(), r.answer_sentence_indices.end());
        r.answer_sentence_indices.erase(std::unique(r.answer_sentence_indices.begin(),
                                                    r.answer_sentence_indices.end()),
                                        r.answer_sentence_indices.end());
        if (r.answer_sentence_indices.empty()) {
            throw std::runtime_error("qa dataset line " + std::to_string(line_no) +
                                     ": record " + r.qid + " has no answer sentences");
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<QARecord> load_qa_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open qa dataset: " + path);
    return read_qa_records(in);
}

void write_qa_dataset(const std::string& path, std::span<const QARecord> records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write qa dataset: " + path);
    for (const QARecord& r : records) {
        json j{{"qid", r.qid},
               {"question", r.question},
               {"qtype", to_string(r.qtype)},
               {"paraphrase_group", r.paraphrase_group},
               {"manual_id", r.manual_id},
               {"gold_section_id", r.gold_section_id},
               {"answer_sentence_indices", r.answer_sentence_indices},
               {"answer_text", r.answer_text}};
        if (!r.extra_references.empty()) j["extra_references"] = r.extra_references;
        out << j.dump() << '\n';
    }
}

void validate_against_corpus(std::span<const QARecord> records,
                             std::span<const Manual> manuals) {
    std::unordered_map<std::string, const Manual*> by_id;
    for (const Manual& m : manuals) by_id[m.manual_id] = &m;
    for (const QARecord& r : records) {
        auto it = by_id.find(r.manual_id);
        if (it == by_id.end()) {
            throw std::runtime_error("record " + r.qid + ": unknown manual '" + r.manual_id +
                                     "'");
        }
        const Section* section = it->second->find_section(r.gold_section_id);
        if (section == nullptr) {
            throw std::runtime_error("record " + r.qid + ": unknown section '" +
                                     r.gold_section_id + "' in manual '" + r.manual_id + "'");
        }
        std::string expected;
        for (std::size_t idx : r.answer_sentence_indices) {
            if (idx >= section->sentences.size()) {
                throw std::runtime_error("record " + r.qid + ": answer sentence index " +
                                         std::to_string(idx) + " out of range");
            }
            if (!expected.empty()) expected.push_back(' ');
            expected += section->sentences[idx].text;
        }
        if (expected != r.answer_text) {
            throw std::runtime_error("record " + r.qid +
                                     ": answer_text does not match its sentence indices");
        }
    }
}

DatasetSplit split_dataset(std::span<const QARecord> records,
                           const std::array<double, 3>& ratios, std::uint64_t seed) {
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) throw std::invalid_argument("split_dataset: ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split_dataset: ratios must sum to 1");
    }

    // group keys in first-appearance order, then shuffled by seed
    std::vector<std::string> keys;
    std::unordered_map<std::string, std::vector<const QARecord*>> groups;
    for (const QARecord& r : records) {
        auto [it, inserted] = groups.try_emplace(r.paraphrase_group);
        if (inserted) keys.push_back(r.paraphrase_group);
        it->second.push_back(&r);
    }
    if (keys.size() < 3) {
        throw std::invalid_argument("split_dataset: need at least as many paraphrase groups "
                                    "as splits (3)");
    }

    Rng rng(seed);
    rng.shuffle(keys);

    const double n_groups = static_cast<double>(keys.size());
    std::array<double, 3> targets{ratios[0] * n_groups, ratios[1] * n_groups,
                                  ratios[2] * n_groups};
    std::array<std::size_t, 3> counts{0, 0, 0};

    DatasetSplit split;
    std::array<std::vector<QARecord>*, 3> outputs{&split.train, &split.validation, &split.test};
    for (const std::string& key : keys) {
        std::size_t best = 0;
        double best_deficit = -1e300;
        for (std::size_t i = 0; i < 3; ++i) {
            const double deficit = targets[i] - static_cast<double>(counts[i]);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = i;
            }
        }
        for (const QARecord* r : groups[key]) outputs[best]->push_back(*r);
        ++counts[best];
    }
    return split;
}

DatasetStats dataset_stats(std::span<const QARecord> records) {
    DatasetStats stats;
    stats.n_records = records.size();
    if (records.empty()) return stats;

    std::size_t factual = 0;
    std::size_t procedural = 0;
    std::size_t location = 0;
    std::size_t q_tokens = 0;
    std::size_t a_tokens = 0;
    std::set<std::string> groups;
    std::map<std::string, std::size_t> prefixes;
    for (const QARecord& r : records) {
        switch (r.qtype) {
            case QuestionType::kFactual: ++factual; break;
            case QuestionType::kProcedural: ++procedural; break;
            case QuestionType::kLocation: ++location; break;
            case QuestionType::kOther: break;
        }
        const auto qt = tokenize(r.question);
        q_tokens += qt.size();
        a_tokens += tokenize(r.answer_text).size();
        groups.insert(r.paraphrase_group);
        ++prefixes[join_tokens(qt, 3)];
    }

    const double n = static_cast<double>(records.size());
    stats.pct_factual = 100.0 * static_cast<double>(factual) / n;
    stats.pct_procedural = 100.0 * static_cast<double>(procedural) / n;
    stats.pct_location = 100.0 * static_cast<double>(location) / n;
    stats.pct_paraphrased =
        100.0 * static_cast<double>(records.size() - groups.size()) / n;
    stats.avg_question_tokens = static_cast<double>(q_tokens) / n;
    stats.avg_answer_tokens = static_cast<double>(a_tokens) / n;

    stats.prefix_histogram.assign(prefixes.begin(), prefixes.end());
    std::sort(stats.prefix_histogram.begin(), stats.prefix_histogram.end(),
              [](const auto& a, const auto& b) {
                  if (a.second != b.second) return a.second > b.second;
                  return a.first < b.first;
              });
    return stats;
}

std::string dataset_stats_csv(const DatasetStats& stats) {
    std::ostringstream out;
    out << "property,value\n";
    out << "n_qa_pairs," << stats.n_records << '\n';
    out << "pct_factual," << stats.pct_factual << '\n';
    out << "pct_procedural," << stats.pct_procedural << '\n';
    out << "pct_location," << stats.pct_location << '\n';
    out << "pct_paraphrased," << stats.pct_paraphrased << '\n';
    out << "avg_question_length," << stats.avg_question_tokens << '\n';
    out << "avg_answer_length," << stats.avg_answer_tokens << '\n';
    return out.str();
}

std::string file_sha1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string content = buffer.str();

    detail::Sha1 sha;
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    sha.update(header.data(), header.size());
    sha.update(content.data(), content.size());
    return sha.hex_digest();
}

std::string csv_to_markdown(const std::string& csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(trim(cell));
        out << '|';
        for (const auto& c : cells) out << ' ' << c << " |";
        out << '\n';
        if (header) {
            out << '|';
            for (std::size_t i = 0; i < cells.size(); ++i) out << "---|";
            out << '\n';
            header = false;
        }
    }
    return out.str();
}

std::string hits_csv(const std::unordered_map<std::size_t, double>& hits) {
    std::vector<std::size_t> ks;
    ks.reserve(hits.size());
    for (const auto& [k, v] : hits) ks.push_back(k);
    std::sort(ks.begin(), ks.end());
    std::ostringstream out;
    out << "k,hits\n";
    for (std::size_t k : ks) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", hits.at(k));
        out << k << ',' << buf << '\n';
    }
    return out.str();
}

MetricReport run_experiment(const ExperimentConfig& cfg) {
    if (cfg.corpus_path.empty() || !fs::exists(cfg.corpus_path)) {
        throw std::runtime_error("run_experiment: corpus path missing: '" + cfg.corpus_path +
                                 "'");
    }
    if (cfg.qa_path.empty() || !fs::exists(cfg.qa_path)) {
        throw std::runtime_error("run_experiment: qa dataset path missing: '" + cfg.qa_path +
                                 "'");
    }
    if (!cfg.embeddings_path.empty() && !fs::exists(cfg.embeddings_path)) {
        throw std::runtime_error("run_experiment: embeddings path missing: '" +
                                 cfg.embeddings_path + "'");
    }
    if (cfg.k == 0) throw std::runtime_error("run_experiment: k must be at least 1");
    if (cfg.train_mode != "sqp" && cfg.train_mode != "mtl") {
        throw std::runtime_error("run_experiment: train.mode must be mtl or sqp, got '" +
                                 cfg.train_mode + "'");
    }

    const std::string exp_dir = cfg.out_dir + "/" + cfg.experiment_name;
    fs::create_directories(exp_dir);

    json manifest{{"config", config_json(cfg)},
                  {"inputs", json{{"corpus_sha1", file_sha1(cfg.corpus_path)},
                                  {"qa_sha1", file_sha1(cfg.qa_path)}}}};
    if (!cfg.embeddings_path.empty()) {
        manifest["inputs"]["embeddings_sha1"] = file_sha1(cfg.embeddings_path);
    }
    {
        std::ofstream mf(exp_dir + "/manifest.json");
        if (!mf) throw std::runtime_error("cannot write manifest in " + exp_dir);
        mf << manifest.dump(2) << '\n';
    }

    detail::Sha1 cfg_sha;
    const std::string cfg_dump = manifest.dump();
    cfg_sha.update(cfg_dump.data(), cfg_dump.size());
    StageTracker stages(exp_dir + "/stages.json", cfg_sha.hex_digest());

    auto run_stage = [&stages](const std::string& name, const auto& body) {
        if (stages.done(name)) return;
        try {
            body();
        } catch (const std::exception& e) {
            throw std::runtime_error("stage '" + name + "' failed: " + e.what());
        }
        stages.mark(name);
    };

    // ingest
    const std::string segmented_path = exp_dir + "/segmented.jsonl";
    run_stage("ingest", [&] {
        const auto raw = read_raw_documents_file(cfg.corpus_path);
        std::vector<Manual> manuals;
        manuals.reserve(raw.size());
        for (const RawDocument& doc : raw) manuals.push_back(segment(doc));
        write_manuals_file(segmented_path, manuals);
    });
    const std::vector<Manual> manuals = read_manuals_file(segmented_path);

    std::vector<QARecord> records = load_qa_dataset(cfg.qa_path);
    validate_against_corpus(records, manuals);

    // index
    const RetrievalMethod method = retrieval_method_from_string(cfg.retrieval_method);
    EmbeddingTable embeddings;
    const bool have_embeddings = !cfg.embeddings_path.empty();
    if (have_embeddings) embeddings = read_embeddings_file(cfg.embeddings_path);

    std::unordered_map<std::string, RetrievalIndex> indexes;
    run_stage("index", [&] {
        for (const Manual& m : manuals) {
            TemplateQuestionGenerator qgen(TemplateQuestionGenerator::idf_over(m.sections));
            ExpansionConfig expansion{&qgen, cfg.questions_per_section};
            RetrievalIndex index =
                build_index(m.sections, method, have_embeddings ? &embeddings : nullptr,
                            cfg.expand ? &expansion : nullptr, cfg.k);
            save_index(exp_dir + "/indexes/" + sanitize_id(m.manual_id), index);
        }
    });
    for (const Manual& m : manuals) {
        indexes.emplace(m.manual_id, load_index(exp_dir + "/indexes/" + sanitize_id(m.manual_id)));
    }

    RetrievalContext ctx;
    for (const Manual& m : manuals) ctx.manuals[m.manual_id] = &m;
    for (const auto& [id, index] : indexes) ctx.indexes[id] = &index;

    // pretrain
    const std::string pretrain_dir = exp_dir + "/pretrain";
    run_stage("pretrain", [&] {
        std::vector<std::string> texts;
        for (const Manual& m : manuals) {
            for (const Section& s : m.sections) {
                if (!s.title.empty()) texts.push_back(s.title);
                for (const Sentence& sent : s.sentences) texts.push_back(sent.text);
            }
        }
        std::vector<std::string> sentences = texts;
        for (const QARecord& r : records) texts.push_back(r.question);

        const Vocabulary vocab = Vocabulary::build(texts);
        EncoderConfig arch;
        arch.vocab_size = vocab.size();
        arch.hidden_dim = cfg.hidden_dim;
        arch.n_blocks = cfg.n_blocks;
        arch.n_heads = cfg.n_heads;
        arch.max_len = cfg.max_len;
        LayeredEncoder encoder(arch, cfg.seed_pretrain);

        CheckpointMeta meta;
        meta.strategy = cfg.pretrain_strategy;
        meta.seed = cfg.seed_pretrain;
        if (cfg.pretrain_strategy != "none") {
            PretrainConfig pcfg;
            pcfg.strategy = pretrain_strategy_from_string(cfg.pretrain_strategy);
            pcfg.slr_lr = cfg.slr_lr;
            pcfg.lrd_head_lr = cfg.lrd_head_lr;
            pcfg.lrd_factor = cfg.lrd_factor;
            pcfg.mask_prob = cfg.mask_prob;
            pcfg.batch_size = cfg.pretrain_batch;
            pcfg.epochs = cfg.pretrain_epochs;
            pcfg.ewc_lambda = cfg.ewc_lambda;
            pcfg.fisher_samples = cfg.fisher_samples;
            pcfg.seed = cfg.seed_pretrain;
            const auto sequences = prepare_sequences(sentences, vocab, arch.max_len);
            const PretrainStats pstats = pretrain(encoder, sequences, pcfg);
            meta.steps = pstats.steps;
        }
        save_checkpoint(pretrain_dir, encoder, vocab, meta);
    });
    Checkpoint ckpt = load_checkpoint(pretrain_dir);

    // split
    const std::string split_path = exp_dir + "/split.json";
    run_stage("split", [&] {
        const DatasetSplit split = split_dataset(records, cfg.split_ratios, cfg.seed_split);
        auto qids = [](const std::vector<QARecord>& rs) {
            std::vector<std::string> out;
            out.reserve(rs.size());
            for (const QARecord& r : rs) out.push_back(r.qid);
            return out;
        };
        json j{{"train", qids(split.train)},
               {"validation", qids(split.validation)},
               {"test", qids(split.test)}};
        std::ofstream out(split_path);
        out << j.dump(2) << '\n';
    });
    DatasetSplit split;
    {
        std::ifstream in(split_path);
        json j = json::parse(in);
        std::unordered_map<std::string, const QARecord*> by_qid;
        for (const QARecord& r : records) by_qid[r.qid] = &r;
        auto fill = [&](const char* name, std::vector<QARecord>& out) {
            for (const auto& qid : j.at(name)) {
                auto it = by_qid.find(qid.get<std::string>());
                if (it == by_qid.end()) {
                    throw std::runtime_error("split references unknown qid " +
                                             qid.get<std::string>());
                }
                out.push_back(*it->second);
            }
        };
        fill("train", split.train);
        fill("validation", split.validation);
        fill("test", split.test);
    }

    // train
    const TrainMode train_mode = cfg.train_mode == "sqp" ? TrainMode::kSqp : TrainMode::kMtl;
    const ArMode ar_mode = ar_mode_from_string(cfg.ar_mode);
    TrainConfig tcfg;
    tcfg.mode = train_mode;
    tcfg.ar_mode = ar_mode;
    tcfg.k = cfg.k;
    tcfg.batch_size = cfg.train_batch;
    tcfg.patience = cfg.patience;
    tcfg.max_epochs = cfg.max_epochs;
    tcfg.lr = cfg.lr;
    tcfg.threshold = cfg.threshold;
    tcfg.seed = cfg.seed_train;

    const std::string model_dir = exp_dir + "/model";
    run_stage("train", [&] {
        if (train_mode == TrainMode::kMtl) {
            MTLModel model(ckpt.encoder, ckpt.vocab, cfg.seed_train);
            train_mtl(model, split.train, split.validation, ctx, tcfg);
            save_mtl_model(model_dir + "/mtl", model);
        } else {
            const SqpModels models =
                train_sqp(ckpt.encoder, ckpt.vocab, split.train, split.validation, ctx, tcfg);
            save_mtl_model(model_dir + "/sr", models.sr);
            save_mtl_model(model_dir + "/ar", models.ar);
        }
    });

    // infer on the test split
    const std::string predictions_path = exp_dir + "/predictions.jsonl";
    run_stage("infer", [&] {
        std::ofstream out(predictions_path);
        if (!out) throw std::runtime_error("cannot write predictions");
        auto write_result = [&out](const QARecord& r, const InferenceResult& result) {
            out << json{{"qid", r.qid},
                        {"answer", result.answer_text},
                        {"section_id", result.predicted_section_id}}
                       .dump()
                << '\n';
        };
        if (train_mode == TrainMode::kMtl) {
            const MTLModel model = load_mtl_model(model_dir + "/mtl");
            for (const QARecord& r : split.test) {
                write_result(r, infer(r.question, ctx.manual_for(r.manual_id),
                                      ctx.index_for(r.manual_id), model, model, cfg.k, ar_mode,
                                      cfg.threshold));
            }
        } else {
            const MTLModel sr_model = load_mtl_model(model_dir + "/sr");
            const MTLModel ar_model = load_mtl_model(model_dir + "/ar");
            for (const QARecord& r : split.test) {
                write_result(r, infer(r.question, ctx.manual_for(r.manual_id),
                                      ctx.index_for(r.manual_id), sr_model, ar_model, cfg.k,
                                      ar_mode, cfg.threshold));
            }
        }
    });

    // eval: metric report + retrieval hits on the test split
    std::unordered_map<std::string, std::string> predictions;
    {
        std::ifstream in(predictions_path);
        if (!in) throw std::runtime_error("stage 'eval' failed: predictions missing");
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            json j = json::parse(line);
            predictions[j.at("qid").get<std::string>()] = j.at("answer").get<std::string>();
        }
    }
    const std::string model_id = cfg.train_mode + "-" + cfg.ar_mode + "-" +
                                 cfg.pretrain_strategy;
    MetricReport report = evaluate_predictions(split.test, predictions,
                                               have_embeddings ? &embeddings : nullptr,
                                               model_id, cfg.k, cfg.ar_mode, cfg.seed_train);
    run_stage("eval", [&] {
        std::ofstream csv(exp_dir + "/report.csv");
        csv << metric_report_csv(report);
        std::ofstream md(exp_dir + "/report.md");
        md << metric_report_markdown(report);

        // Hits@K of the unsupervised index over the test questions,
        // aggregated across manuals weighted by record count
        const std::vector<std::size_t> ks{1, 5, 10};
        std::unordered_map<std::size_t, double> weighted;
        std::unordered_map<std::string, std::vector<QARecordRef>> by_manual;
        for (const QARecord& r : split.test) {
            by_manual[r.manual_id].push_back({r.qid, r.question, r.gold_section_id});
        }
        if (!split.test.empty()) {
            for (const auto& [manual_id, refs] : by_manual) {
                const auto hits = hits_at_k(refs, ctx.index_for(manual_id), ks);
                const double weight = static_cast<double>(refs.size()) /
                                      static_cast<double>(split.test.size());
                for (std::size_t k : ks) weighted[k] += hits.at(k) * weight;
            }
        } else {
            for (std::size_t k : ks) weighted[k] = 0.0;
        }
        std::ofstream hits_out(exp_dir + "/hits.csv");
        hits_out << hits_csv(weighted);
    });

    return report;
}

}  // namespace manualqa
