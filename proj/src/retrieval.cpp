#include "manualqa/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "manualqa/detail/binio.hpp"

namespace manualqa {

namespace {

constexpr char kIndexMagic[8] = {'M', 'Q', 'A', 'I', 'D', 'X', '1', '\0'};

std::string section_full_text(const Section& section) {
    std::string text = section.title;
    const std::string body = section.text();
    if (!text.empty() && !body.empty()) text.push_back(' ');
    text += body;
    return text;
}

std::unordered_map<std::string, std::size_t> term_counts(const std::vector<std::string>& tokens) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : tokens) ++counts[t];
    return counts;
}

double dot_sparse(const SparseVector& a, const SparseVector& b) {
    double sum = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.entries.size() && j < b.entries.size()) {
        if (a.entries[i].first < b.entries[j].first) {
            ++i;
        } else if (a.entries[i].first > b.entries[j].first) {
            ++j;
        } else {
            sum += a.entries[i].second * b.entries[j].second;
            ++i;
            ++j;
        }
    }
    return sum;
}

double norm_sparse(const SparseVector& v) {
    double sum = 0.0;
    for (const auto& [id, w] : v.entries) sum += w * w;
    return std::sqrt(sum);
}

// token-set overlap; `a_extra` counts set-a members known to miss every b
double jaccard(const SparseVector& a, const SparseVector& b, std::size_t a_extra = 0) {
    std::size_t inter = 0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.entries.size() && j < b.entries.size()) {
        if (a.entries[i].first < b.entries[j].first) {
            ++i;
        } else if (a.entries[i].first > b.entries[j].first) {
            ++j;
        } else {
            ++inter;
            ++i;
            ++j;
        }
    }
    const std::size_t uni = a.entries.size() + a_extra + b.entries.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> average_embedding(const std::vector<std::string>& tokens,
                                      const EmbeddingTable& table) {
    std::vector<double> mean(table.dimension, 0.0);
    std::size_t hits = 0;
    for (const auto& t : tokens) {
        if (const auto* vec = table.find(t)) {
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*vec)[i];
            ++hits;
        }
    }
    if (hits > 0) {
        for (double& v : mean) v /= static_cast<double>(hits);
    }
    return mean;  // all-OOV text keeps the zero vector
}

double cosine_dense(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

std::string to_string(RetrievalMethod method) {
    switch (method) {
        case RetrievalMethod::kTfIdf: return "tfidf";
        case RetrievalMethod::kJaccard: return "jaccard";
        case RetrievalMethod::kCountVec: return "countvec";
        case RetrievalMethod::kAvgEmbedding: return "avg_embedding";
    }
    return "tfidf";
}

RetrievalMethod retrieval_method_from_string(std::string_view name) {
    if (name == "tfidf") return RetrievalMethod::kTfIdf;
    if (name == "jaccard") return RetrievalMethod::kJaccard;
    if (name == "countvec") return RetrievalMethod::kCountVec;
    if (name == "avg_embedding") return RetrievalMethod::kAvgEmbedding;
    throw std::invalid_argument("unknown retrieval method: " + std::string(name));
}

std::vector<std::string> TemplateQuestionGenerator::generate(const Section& section,
                                                             std::size_t m) const {
    std::vector<std::string> questions;
    const std::string body = section.text();
    if (section.title.empty() && body.empty()) return questions;

    if (!section.title.empty()) {
        std::string title;
        for (const auto& t : tokenize(section.title)) {
            if (!title.empty()) title.push_back(' ');
            title += t;
        }
        if (!title.empty()) {
            questions.push_back("what is " + title + "?");
            questions.push_back("how to " + title + "?");
        }
    }

    // "how do i <top term>?" where top term maximizes count * idf
    const auto tokens = tokenize(section_full_text(section));
    if (!tokens.empty()) {
        const auto counts = term_counts(tokens);
        std::string best;
        double best_weight = -1.0;
        for (const auto& [token, count] : counts) {
            double w = static_cast<double>(count);
            if (auto it = idf_.find(token); it != idf_.end()) w *= it->second;
            if (w > best_weight || (w == best_weight && token < best)) {
                best_weight = w;
                best = token;
            }
        }
        questions.push_back("how do i " + best + "?");
    }

    if (questions.size() > m) questions.resize(m);
    return questions;
}

std::unordered_map<std::string, double> TemplateQuestionGenerator::idf_over(
    std::span<const Section> sections) {
    std::unordered_map<std::string, std::size_t> df;
    for (const Section& s : sections) {
        std::set<std::string> seen;
        for (const auto& t : tokenize(section_full_text(s))) seen.insert(t);
        for (const auto& t : seen) ++df[t];
    }
    const double n = static_cast<double>(sections.size());
    std::unordered_map<std::string, double> idf;
    for (const auto& [token, count] : df) {
        idf[token] = std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0;
    }
    return idf;
}

std::string expand_section(const Section& section, const QuestionGenerator& generator,
                           std::size_t m) {
    std::string text = section_full_text(section);
    for (const std::string& q : generator.generate(section, m)) {
        if (!text.empty()) text.push_back(' ');
        text += q;
    }
    return text;
}

bool RetrievalIndex::has_section(std::string_view section_id) const {
    return std::find(section_ids.begin(), section_ids.end(), section_id) != section_ids.end();
}

RetrievalIndex build_index(std::span<const Section> sections, RetrievalMethod method,
                           const EmbeddingTable* embeddings, const ExpansionConfig* expansion,
                           std::size_t k_default) {
    if (sections.empty()) throw std::invalid_argument("build_index: no sections");
    if (method == RetrievalMethod::kAvgEmbedding && embeddings == nullptr) {
        throw std::invalid_argument("build_index: avg_embedding requires an embedding table");
    }

    RetrievalIndex index;
    index.method = method;
    index.k_default = k_default;
    index.expanded = expansion != nullptr && expansion->generator != nullptr;

    std::vector<std::vector<std::string>> section_tokens;
    section_tokens.reserve(sections.size());
    for (const Section& s : sections) {
        index.section_ids.push_back(s.section_id);
        const std::string text =
            index.expanded
                ? expand_section(s, *expansion->generator, expansion->questions_per_section)
                : section_full_text(s);
        section_tokens.push_back(tokenize(text));
    }

    // sorted vocabulary over everything the index covers
    std::set<std::string> vocab_set;
    for (const auto& tokens : section_tokens) vocab_set.insert(tokens.begin(), tokens.end());
    index.vocab_tokens.assign(vocab_set.begin(), vocab_set.end());
    for (std::uint32_t id = 0; id < index.vocab_tokens.size(); ++id) {
        index.vocabulary[index.vocab_tokens[id]] = id;
    }

    if (method == RetrievalMethod::kAvgEmbedding) {
        index.embeddings = *embeddings;
        index.embedding_dim = embeddings->dimension;
        for (const auto& tokens : section_tokens) {
            index.dense_vectors.push_back(average_embedding(tokens, *embeddings));
        }
        return index;
    }

    if (method == RetrievalMethod::kTfIdf) {
        std::vector<std::size_t> df(index.vocab_tokens.size(), 0);
        for (const auto& tokens : section_tokens) {
            std::set<std::uint32_t> seen;
            for (const auto& t : tokens) seen.insert(index.vocabulary.at(t));
            for (auto id : seen) ++df[id];
        }
        const double n = static_cast<double>(sections.size());
        index.idf.resize(df.size());
        for (std::size_t i = 0; i < df.size(); ++i) {
            index.idf[i] = std::log((1.0 + n) / (1.0 + static_cast<double>(df[i]))) + 1.0;
        }
    }

    for (const auto& tokens : section_tokens) {
        SparseVector vec;
        const auto counts = term_counts(tokens);
        vec.entries.reserve(counts.size());
        for (const auto& [token, count] : counts) {
            const std::uint32_t id = index.vocabulary.at(token);
            double w = static_cast<double>(count);
            if (method == RetrievalMethod::kTfIdf) w *= index.idf[id];
            if (method == RetrievalMethod::kJaccard) w = 1.0;
            vec.entries.emplace_back(id, w);
        }
        std::sort(vec.entries.begin(), vec.entries.end());
        if (method == RetrievalMethod::kTfIdf) {
            const double norm = norm_sparse(vec);
            if (norm > 0.0) {
                for (auto& [id, w] : vec.entries) w /= norm;
            }
        }
        index.sparse_vectors.push_back(std::move(vec));
    }
    return index;
}

std::unordered_map<std::string, double> score(const std::string& question,
                                              const RetrievalIndex& index) {
    std::unordered_map<std::string, double> scores;
    const auto tokens = tokenize(question);

    if (index.method == RetrievalMethod::kAvgEmbedding) {
        const auto qvec = average_embedding(tokens, index.embeddings);
        for (std::size_t i = 0; i < index.section_ids.size(); ++i) {
            scores[index.section_ids[i]] = cosine_dense(qvec, index.dense_vectors[i]);
        }
        return scores;
    }

    SparseVector qvec;
    std::size_t oov_distinct = 0;  // question tokens outside the index vocabulary
    const auto counts = term_counts(tokens);
    for (const auto& [token, count] : counts) {
        auto it = index.vocabulary.find(token);
        if (it == index.vocabulary.end()) {
            ++oov_distinct;
            continue;
        }
        double w = static_cast<double>(count);
        if (index.method == RetrievalMethod::kTfIdf) w *= index.idf[it->second];
        if (index.method == RetrievalMethod::kJaccard) w = 1.0;
        qvec.entries.emplace_back(it->second, w);
    }
    std::sort(qvec.entries.begin(), qvec.entries.end());

    const double qnorm = norm_sparse(qvec);
    for (std::size_t i = 0; i < index.section_ids.size(); ++i) {
        const SparseVector& svec = index.sparse_vectors[i];
        double s = 0.0;
        switch (index.method) {
            case RetrievalMethod::kJaccard:
                s = jaccard(qvec, svec, oov_distinct);
                break;
            case RetrievalMethod::kTfIdf:
                // section vectors are already unit length
                s = qnorm > 0.0 ? dot_sparse(qvec, svec) / qnorm : 0.0;
                break;
            case RetrievalMethod::kCountVec: {
                const double snorm = norm_sparse(svec);
                s = (qnorm > 0.0 && snorm > 0.0) ? dot_sparse(qvec, svec) / (qnorm * snorm)
                                                 : 0.0;
                break;
            }
            case RetrievalMethod::kAvgEmbedding:
                break;  // handled above
        }
        scores[index.section_ids[i]] = s;
    }
    return scores;
}

namespace {

std::vector<RankedEntry> full_ranking(const std::string& question, const RetrievalIndex& index) {
    const auto scores = score(question, index);
    std::vector<RankedEntry> entries;
    entries.reserve(scores.size());
    for (const auto& [section_id, s] : scores) entries.push_back({section_id, s});
    std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.section_id < b.section_id;
    });
    return entries;
}

}  // namespace

RankedList top_k(const std::string& question, const RetrievalIndex& index, std::size_t k) {
    if (k == 0) throw std::invalid_argument("top_k: K must be at least 1");
    RankedList list;
    list.entries = full_ranking(question, index);
    if (list.entries.size() > k) list.entries.resize(k);
    return list;
}

std::size_t rank_of(const std::string& question, const RetrievalIndex& index,
                    std::string_view section_id) {
    const auto ranking = full_ranking(question, index);
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        if (ranking[i].section_id == section_id) return i + 1;
    }
    throw std::invalid_argument("rank_of: section not in index: " + std::string(section_id));
}

std::unordered_map<std::size_t, double> hits_at_k(std::span<const QARecordRef> records,
                                                  const RetrievalIndex& index,
                                                  std::span<const std::size_t> ks) {
    for (const QARecordRef& r : records) {
        if (!index.has_section(r.gold_section_id)) {
            throw std::runtime_error("hits_at_k: record '" + r.qid + "' references section '" +
                                     r.gold_section_id + "' absent from the index");
        }
    }
    std::unordered_map<std::size_t, double> hits;
    if (records.empty()) {
        for (std::size_t k : ks) hits[k] = 0.0;
        return hits;
    }
    std::vector<std::size_t> gold_ranks;
    gold_ranks.reserve(records.size());
    for (const QARecordRef& r : records) {
        gold_ranks.push_back(rank_of(r.question, index, r.gold_section_id));
    }
    for (std::size_t k : ks) {
        std::size_t n_hit = 0;
        for (std::size_t rank : gold_ranks) {
            if (rank <= k) ++n_hit;
        }
        hits[k] = static_cast<double>(n_hit) / static_cast<double>(records.size());
    }
    return hits;
}

void save_index(const std::string& dir, const RetrievalIndex& index) {
    std::filesystem::create_directories(dir);

    nlohmann::json manifest{{"method", to_string(index.method)},
                            {"k_default", index.k_default},
                            {"expanded", index.expanded},
                            {"vocab_size", index.vocab_tokens.size()},
                            {"n_sections", index.section_ids.size()},
                            {"section_ids", index.section_ids},
                            {"vocabulary", index.vocab_tokens},
                            {"embedding_dim", index.embedding_dim}};
    std::ofstream mf(dir + "/index.json");
    if (!mf) throw std::runtime_error("cannot write index manifest in " + dir);
    mf << manifest.dump(2) << '\n';

    std::ofstream bin(dir + "/vectors.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write index vectors in " + dir);
    bin.write(kIndexMagic, sizeof(kIndexMagic));
    detail::put_u32(bin, static_cast<std::uint32_t>(index.method));
    detail::put_u32(bin, index.expanded ? 1u : 0u);
    detail::put_u32(bin, static_cast<std::uint32_t>(index.vocab_tokens.size()));
    detail::put_u32(bin, static_cast<std::uint32_t>(index.section_ids.size()));

    detail::put_u64(bin, index.idf.size());
    for (double v : index.idf) detail::put_f64(bin, v);

    if (index.method == RetrievalMethod::kAvgEmbedding) {
        for (const auto& vec : index.dense_vectors) {
            detail::put_u64(bin, vec.size());
            for (double v : vec) detail::put_f64(bin, v);
        }
        std::vector<std::string> tokens;
        tokens.reserve(index.embeddings.vectors.size());
        for (const auto& [token, vec] : index.embeddings.vectors) tokens.push_back(token);
        std::sort(tokens.begin(), tokens.end());
        detail::put_u64(bin, tokens.size());
        for (const auto& token : tokens) {
            detail::put_u32(bin, static_cast<std::uint32_t>(token.size()));
            bin.write(token.data(), static_cast<std::streamsize>(token.size()));
            for (double v : index.embeddings.vectors.at(token)) detail::put_f64(bin, v);
        }
    } else {
        for (const auto& vec : index.sparse_vectors) {
            detail::put_u64(bin, vec.entries.size());
            for (const auto& [id, w] : vec.entries) {
                detail::put_u32(bin, id);
                detail::put_f64(bin, w);
            }
        }
        detail::put_u64(bin, 0);  // no embedding table
    }
}

RetrievalIndex load_index(const std::string& dir) {
    std::ifstream mf(dir + "/index.json");
    if (!mf) throw std::runtime_error("cannot open index manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf);

    RetrievalIndex index;
    index.method = retrieval_method_from_string(manifest.at("method").get<std::string>());
    index.k_default = manifest.at("k_default").get<std::size_t>();
    index.expanded = manifest.at("expanded").get<bool>();
    index.section_ids = manifest.at("section_ids").get<std::vector<std::string>>();
    index.vocab_tokens = manifest.at("vocabulary").get<std::vector<std::string>>();
    index.embedding_dim = manifest.at("embedding_dim").get<std::size_t>();
    for (std::uint32_t id = 0; id < index.vocab_tokens.size(); ++id) {
        index.vocabulary[index.vocab_tokens[id]] = id;
    }

    std::ifstream bin(dir + "/vectors.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open index vectors in " + dir);
    char magic[8];
    bin.read(magic, sizeof(magic));
    if (std::memcmp(magic, kIndexMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("bad index vector file magic in " + dir);
    }
    const auto method = static_cast<RetrievalMethod>(detail::get_u32(bin));
    const bool expanded = detail::get_u32(bin) != 0;
    const std::uint32_t vocab_size = detail::get_u32(bin);
    const std::uint32_t n_sections = detail::get_u32(bin);
    if (method != index.method || expanded != index.expanded ||
        vocab_size != index.vocab_tokens.size() || n_sections != index.section_ids.size()) {
        throw std::runtime_error("index manifest and vector file disagree in " + dir);
    }

    const std::uint64_t idf_count = detail::get_u64(bin);
    index.idf.resize(idf_count);
    for (auto& v : index.idf) v = detail::get_f64(bin);

    if (index.method == RetrievalMethod::kAvgEmbedding) {
        for (std::uint32_t i = 0; i < n_sections; ++i) {
            const std::uint64_t dim = detail::get_u64(bin);
            std::vector<double> vec(dim);
            for (auto& v : vec) v = detail::get_f64(bin);
            index.dense_vectors.push_back(std::move(vec));
        }
        const std::uint64_t n_tokens = detail::get_u64(bin);
        index.embeddings.dimension = index.embedding_dim;
        for (std::uint64_t i = 0; i < n_tokens; ++i) {
            const std::uint32_t len = detail::get_u32(bin);
            std::string token(len, '\0');
            bin.read(token.data(), len);
            std::vector<double> vec(index.embedding_dim);
            for (auto& v : vec) v = detail::get_f64(bin);
            index.embeddings.vectors[token] = std::move(vec);
        }
    } else {
        for (std::uint32_t i = 0; i < n_sections; ++i) {
            const std::uint64_t nnz = detail::get_u64(bin);
            SparseVector vec;
            vec.entries.reserve(nnz);
            for (std::uint64_t e = 0; e < nnz; ++e) {
                const std::uint32_t id = detail::get_u32(bin);
                const double w = detail::get_f64(bin);
                vec.entries.emplace_back(id, w);
            }
            index.sparse_vectors.push_back(std::move(vec));
        }
        detail::get_u64(bin);  // embedding table count, always zero here
    }
    if (!bin) throw std::runtime_error("truncated index vector file in " + dir);
    return index;
}

}  // namespace manualqa
