#include "manualqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "manualqa/corpus.hpp"
#include "manualqa/encoder.hpp"
#include "manualqa/retrieval.hpp"

namespace manualqa {

namespace {

constexpr double kMassTol = 1e-9;
constexpr double kFlowTol = 1e-13;

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sum += diff * diff;
    }
    return std::sqrt(sum);
}

std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_space = true;  // whitespace and punctuation both separate
        }
    }
    return out;
}

int exact_match(std::string_view pred, std::string_view ref) {
    return normalize_answer(pred) == normalize_answer(ref) ? 1 : 0;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    std::vector<std::size_t> prev(m + 1, 0);
    std::vector<std::size_t> cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (a[i - 1] == b[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

RougeL rouge_l(std::string_view pred, std::string_view ref) {
    const auto p_tokens = tokenize(pred);
    const auto r_tokens = tokenize(ref);
    RougeL out;
    if (p_tokens.empty() || r_tokens.empty()) return out;
    const double lcs = static_cast<double>(lcs_length(p_tokens, r_tokens));
    out.precision = lcs / static_cast<double>(p_tokens.size());
    out.recall = lcs / static_cast<double>(r_tokens.size());
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

Bag build_swms_bag(std::string_view text, const EmbeddingTable& embeddings) {
    const auto tokens = tokenize(text);
    std::map<std::string, std::size_t> word_counts;  // sorted for determinism
    for (const auto& t : tokens) {
        if (embeddings.contains(t)) ++word_counts[t];
    }
    if (word_counts.empty()) {
        throw std::runtime_error("build_swms_bag: text has no in-vocabulary token");
    }

    Bag bag;
    double total = 0.0;
    for (const auto& [word, count] : word_counts) {
        BagPoint point;
        point.embedding = *embeddings.find(word);
        point.mass = static_cast<double>(count);
        total += point.mass;
        bag.points.push_back(std::move(point));
    }

    static const auto abbrevs = SegmentOptions::default_abbreviations();
    for (const auto& sentence : split_sentences(text, abbrevs)) {
        std::vector<double> mean(embeddings.dimension, 0.0);
        std::size_t hits = 0;
        for (const auto& t : tokenize(sentence)) {
            if (const auto* vec = embeddings.find(t)) {
                for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*vec)[i];
                ++hits;
            }
        }
        if (hits == 0) continue;  // sentence contributes no representable point
        for (double& v : mean) v /= static_cast<double>(hits);
        BagPoint point;
        point.embedding = std::move(mean);
        point.mass = static_cast<double>(hits);
        total += point.mass;
        bag.points.push_back(std::move(point));
    }

    for (BagPoint& p : bag.points) p.mass /= total;
    return bag;
}

double emd(const Bag& a, const Bag& b) {
    if (a.points.empty() || b.points.empty()) {
        throw std::invalid_argument("emd: empty bag");
    }
    if (a.dimension() != b.dimension()) {
        throw std::invalid_argument("emd: embedding dimension mismatch");
    }
    double sum_a = 0.0;
    double sum_b = 0.0;
    for (const auto& p : a.points) sum_a += p.mass;
    for (const auto& p : b.points) sum_b += p.mass;
    if (std::abs(sum_a - 1.0) > kMassTol || std::abs(sum_b - 1.0) > kMassTol) {
        throw std::invalid_argument("emd: bag masses must sum to 1");
    }

    const std::size_t n = a.points.size();
    const std::size_t m = b.points.size();
    const std::size_t nodes = n + m;
    std::vector<double> cost(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            cost[i * m + j] = euclidean(a.points[i].embedding, b.points[j].embedding);
        }
    }

    std::vector<double> flow(n * m, 0.0);
    std::vector<double> supply(n);
    std::vector<double> demand(m);
    for (std::size_t i = 0; i < n; ++i) supply[i] = a.points[i].mass;
    for (std::size_t j = 0; j < m; ++j) demand[j] = b.points[j].mass;

    // successive shortest augmenting paths with node potentials; nodes
    // 0..n-1 are bag-a points, n..n+m-1 are bag-b points
    std::vector<double> pot(nodes, 0.0);
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(nodes);
    std::vector<char> visited(nodes);
    std::vector<std::ptrdiff_t> pred(nodes);

    const std::size_t max_augmentations = 64 * nodes * nodes + 256;
    std::size_t augmentations = 0;
    while (true) {
        bool any_supply = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (supply[i] > kFlowTol) {
                any_supply = true;
                break;
            }
        }
        if (!any_supply) break;
        if (++augmentations > max_augmentations) {
            throw std::runtime_error("emd: transport solve did not converge");
        }

        std::fill(dist.begin(), dist.end(), inf);
        std::fill(visited.begin(), visited.end(), 0);
        std::fill(pred.begin(), pred.end(), -1);
        for (std::size_t i = 0; i < n; ++i) {
            if (supply[i] > kFlowTol) dist[i] = 0.0;
        }

        for (std::size_t iter = 0; iter < nodes; ++iter) {
            std::size_t u = nodes;
            double best = inf;
            for (std::size_t v = 0; v < nodes; ++v) {
                if (!visited[v] && dist[v] < best) {
                    best = dist[v];
                    u = v;
                }
            }
            if (u == nodes) break;
            visited[u] = 1;
            // reduced costs are clamped at zero: tight arcs can come out a
            // few ulp negative, which would re-relax settled nodes and knot
            // the predecessor chain
            if (u < n) {
                const std::size_t i = u;
                for (std::size_t j = 0; j < m; ++j) {
                    if (visited[n + j]) continue;
                    const double w =
                        std::max(0.0, cost[i * m + j] + pot[i] - pot[n + j]);
                    if (dist[i] + w < dist[n + j]) {
                        dist[n + j] = dist[i] + w;
                        pred[n + j] = static_cast<std::ptrdiff_t>(i);
                    }
                }
            } else {
                const std::size_t j = u - n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (visited[i] || flow[i * m + j] <= kFlowTol) continue;
                    const double w =
                        std::max(0.0, -cost[i * m + j] + pot[n + j] - pot[i]);
                    if (dist[n + j] + w < dist[i]) {
                        dist[i] = dist[n + j] + w;
                        pred[i] = static_cast<std::ptrdiff_t>(n + j);
                    }
                }
            }
        }

        std::size_t target = m;
        double target_dist = inf;
        for (std::size_t j = 0; j < m; ++j) {
            if (demand[j] > kFlowTol && dist[n + j] < target_dist) {
                target_dist = dist[n + j];
                target = j;
            }
        }
        if (target == m) throw std::runtime_error("emd: no augmenting path found");

        for (std::size_t v = 0; v < nodes; ++v) {
            pot[v] += std::min(dist[v], target_dist);
        }

        // bottleneck along the predecessor path
        double delta = demand[target];
        std::size_t node = n + target;
        while (pred[node] >= 0) {
            const std::size_t prev = static_cast<std::size_t>(pred[node]);
            if (node >= n) {
                // forward arc prev(source) -> node(sink): unconstrained
            } else {
                // backward arc prev(sink) -> node(source): limited by its flow
                delta = std::min(delta, flow[node * m + (prev - n)]);
            }
            node = prev;
        }
        delta = std::min(delta, supply[node]);

        node = n + target;
        while (pred[node] >= 0) {
            const std::size_t prev = static_cast<std::size_t>(pred[node]);
            if (node >= n) {
                flow[prev * m + (node - n)] += delta;
            } else {
                flow[node * m + (prev - n)] -= delta;
            }
            node = prev;
        }
        supply[node] -= delta;
        demand[target] -= delta;
    }

    double total_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) total_cost += flow[i * m + j] * cost[i * m + j];
    }
    return total_cost;
}

double swms(std::string_view pred, std::string_view ref, const EmbeddingTable& embeddings) {
    const Bag pred_bag = build_swms_bag(pred, embeddings);
    const Bag ref_bag = build_swms_bag(ref, embeddings);
    return std::exp(-emd(pred_bag, ref_bag));
}

MetricReport evaluate_predictions(std::span<const QARecord> records,
                                  const std::unordered_map<std::string, std::string>& predictions,
                                  const EmbeddingTable* embeddings, std::string model_id,
                                  std::size_t k, std::string mode, std::uint64_t seed) {
    MetricReport report;
    report.model_id = std::move(model_id);
    report.k = k;
    report.mode = std::move(mode);
    report.seed = seed;

    std::size_t max_extras = 0;
    for (const QARecord& r : records) {
        max_extras = std::max(max_extras, r.extra_references.size());
    }
    report.reference_names.push_back("gold");
    for (std::size_t i = 0; i < max_extras; ++i) {
        report.reference_names.push_back("ref" + std::to_string(i + 1));
    }

    auto score_pair = [&](const std::string& pred, const std::string& ref) {
        MetricScores s;
        s.em = exact_match(pred, ref);
        const RougeL rouge = rouge_l(pred, ref);
        s.rouge_p = rouge.precision;
        s.rouge_r = rouge.recall;
        s.rouge_f1 = rouge.f1;
        if (embeddings != nullptr) {
            try {
                s.swms = swms(pred, ref, *embeddings);
            } catch (const std::exception&) {
                s.swms = 0.0;  // unscoreable text
            }
        }
        return s;
    };

    for (const QARecord& r : records) {
        MetricRow row;
        row.qid = r.qid;
        auto it = predictions.find(r.qid);
        const std::string pred = it == predictions.end() ? std::string() : it->second;
        row.per_reference.push_back(score_pair(pred, r.answer_text));
        for (const auto& ref : r.extra_references) {
            row.per_reference.push_back(score_pair(pred, ref));
        }
        report.rows.push_back(std::move(row));
    }

    report.aggregates.resize(report.reference_names.size());
    std::vector<std::size_t> counts(report.reference_names.size(), 0);
    for (const MetricRow& row : report.rows) {
        for (std::size_t i = 0; i < row.per_reference.size(); ++i) {
            const MetricScores& s = row.per_reference[i];
            report.aggregates[i].em += s.em;
            report.aggregates[i].rouge_p += s.rouge_p;
            report.aggregates[i].rouge_r += s.rouge_r;
            report.aggregates[i].rouge_f1 += s.rouge_f1;
            report.aggregates[i].swms += s.swms;
            ++counts[i];
        }
    }
    for (std::size_t i = 0; i < report.aggregates.size(); ++i) {
        if (counts[i] == 0) continue;
        const double inv = 1.0 / static_cast<double>(counts[i]);
        report.aggregates[i].em *= inv;
        report.aggregates[i].rouge_p *= inv;
        report.aggregates[i].rouge_r *= inv;
        report.aggregates[i].rouge_f1 *= inv;
        report.aggregates[i].swms *= inv;
    }
    return report;
}

std::string metric_report_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "reference,qid,em,rouge_p,rouge_r,rouge_f1,swms\n";
    auto emit = [&out](const std::string& ref, const std::string& qid, const MetricScores& s) {
        out << ref << ',' << qid << ',' << format_score(s.em) << ','
            << format_score(s.rouge_p) << ',' << format_score(s.rouge_r) << ','
            << format_score(s.rouge_f1) << ',' << format_score(s.swms) << '\n';
    };
    for (std::size_t i = 0; i < report.reference_names.size(); ++i) {
        for (const MetricRow& row : report.rows) {
            if (i < row.per_reference.size()) {
                emit(report.reference_names[i], row.qid, row.per_reference[i]);
            }
        }
        emit(report.reference_names[i], "aggregate", report.aggregates[i]);
    }
    return out.str();
}

std::string metric_report_markdown(const MetricReport& report) {
    std::ostringstream out;
    const std::string model = report.model_id.empty() ? "model" : report.model_id;
    out << "| MODEL | GT | EM | P | R | F1 | S+WMS |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < report.reference_names.size(); ++i) {
        const MetricScores& s = report.aggregates[i];
        out << "| " << model << " | " << report.reference_names[i] << " | "
            << format_score(s.em) << " | " << format_score(s.rouge_p) << " | "
            << format_score(s.rouge_r) << " | " << format_score(s.rouge_f1) << " | "
            << format_score(s.swms) << " |\n";
    }
    return out.str();
}

namespace {

// cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvectors end up
// in the columns of `vecs`
void jacobi_eigen(std::vector<double>& mat, std::size_t d, std::vector<double>& vals,
                  std::vector<double>& vecs) {
    vecs.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) vecs[i * d + i] = 1.0;

    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) off += mat[p * d + q] * mat[p * d + q];
        }
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = mat[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (mat[q * d + q] - mat[p * d + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    const double aip = mat[i * d + p];
                    const double aiq = mat[i * d + q];
                    mat[i * d + p] = c * aip - s * aiq;
                    mat[i * d + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double api = mat[p * d + i];
                    const double aqi = mat[q * d + i];
                    mat[p * d + i] = c * api - s * aqi;
                    mat[q * d + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = vecs[i * d + p];
                    const double viq = vecs[i * d + q];
                    vecs[i * d + p] = c * vip - s * viq;
                    vecs[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    vals.resize(d);
    for (std::size_t i = 0; i < d; ++i) vals[i] = mat[i * d + i];
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 && nb == 0.0) return 0.0;  // identical zero representations
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<std::vector<std::size_t>> neighbor_ranking(std::span<const double> points,
                                                       std::size_t n, std::size_t dim,
                                                       std::size_t k) {
    if (n == 0 || k == 0 || k >= n) {
        throw std::invalid_argument("neighbor_ranking: k must be in [1, n)");
    }
    std::vector<std::vector<std::size_t>> result(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(n - 1);
        for (std::size_t o = 0; o < n; ++o) {
            if (o == i) continue;
            ranked.emplace_back(cosine_distance({points.data() + i * dim, dim},
                                                {points.data() + o * dim, dim}),
                                o);
        }
        std::sort(ranked.begin(), ranked.end());
        result[i].reserve(k);
        for (std::size_t r = 0; r < k; ++r) result[i].push_back(ranked[r].second);
    }
    return result;
}

std::vector<std::pair<std::string, std::vector<std::string>>> nearest_neighbors(
    std::span<const std::string> words, const LayeredEncoder& encoder,
    const Vocabulary& vocab, std::span<const std::string> probe_sentences, std::size_t k) {
    if (words.empty()) throw std::invalid_argument("nearest_neighbors: empty word set");
    if (k == 0 || k >= words.size()) {
        throw std::invalid_argument("nearest_neighbors: k must be in [1, word count)");
    }

    const std::size_t d = encoder.config().hidden_dim;
    std::unordered_map<int, std::size_t> word_index;
    for (std::size_t w = 0; w < words.size(); ++w) {
        const int id = vocab.id_of(words[w]);
        if (id == Vocabulary::kUnk && words[w] != vocab.token_of(Vocabulary::kUnk)) {
            throw std::invalid_argument("nearest_neighbors: word not in vocabulary: " + words[w]);
        }
        word_index[id] = w;
    }

    std::vector<double> sums(words.size() * d, 0.0);
    std::vector<std::size_t> counts(words.size(), 0);
    LayeredEncoder::Workspace ws;
    for (const auto& sentence : probe_sentences) {
        auto ids = vocab.encode(sentence);
        if (ids.empty()) continue;
        std::vector<int> seq;
        seq.reserve(ids.size() + 2);
        seq.push_back(Vocabulary::kBos);
        seq.insert(seq.end(), ids.begin(), ids.end());
        seq.push_back(Vocabulary::kSep);
        if (seq.size() > encoder.config().max_len) seq.resize(encoder.config().max_len);
        bool relevant = false;
        for (int id : seq) {
            if (word_index.count(id)) {
                relevant = true;
                break;
            }
        }
        if (!relevant) continue;
        encoder.forward(seq, ws);
        const auto states = encoder.final_states(ws);
        for (std::size_t p = 0; p < seq.size(); ++p) {
            auto it = word_index.find(seq[p]);
            if (it == word_index.end()) continue;
            double* acc = sums.data() + it->second * d;
            for (std::size_t c = 0; c < d; ++c) acc[c] += states[p * d + c];
            ++counts[it->second];
        }
    }
    // lone-word probe for words that never occur in the corpus
    for (std::size_t w = 0; w < words.size(); ++w) {
        if (counts[w] > 0) continue;
        const std::vector<int> seq{Vocabulary::kBos, vocab.id_of(words[w]), Vocabulary::kSep};
        encoder.forward(seq, ws);
        const auto states = encoder.final_states(ws);
        double* acc = sums.data() + w * d;
        for (std::size_t c = 0; c < d; ++c) acc[c] = states[d + c];
        counts[w] = 1;
    }
    for (std::size_t w = 0; w < words.size(); ++w) {
        double* acc = sums.data() + w * d;
        for (std::size_t c = 0; c < d; ++c) acc[c] /= static_cast<double>(counts[w]);
    }

    // PCA to 3 dimensions: center, covariance, top eigenvectors
    const std::size_t q = std::min<std::size_t>(3, d);
    std::vector<double> mean(d, 0.0);
    for (std::size_t w = 0; w < words.size(); ++w) {
        for (std::size_t c = 0; c < d; ++c) mean[c] += sums[w * d + c];
    }
    for (double& v : mean) v /= static_cast<double>(words.size());
    std::vector<double> centered(words.size() * d);
    for (std::size_t w = 0; w < words.size(); ++w) {
        for (std::size_t c = 0; c < d; ++c) centered[w * d + c] = sums[w * d + c] - mean[c];
    }
    std::vector<double> cov(d * d, 0.0);
    const double denom = static_cast<double>(words.size() > 1 ? words.size() - 1 : 1);
    for (std::size_t w = 0; w < words.size(); ++w) {
        const double* row = centered.data() + w * d;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i; j < d; ++j) cov[i * d + j] += row[i] * row[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    std::vector<double> eigvals;
    std::vector<double> eigvecs;
    jacobi_eigen(cov, d, eigvals, eigvecs);
    std::vector<std::size_t> comp_order(d);
    for (std::size_t i = 0; i < d; ++i) comp_order[i] = i;
    std::sort(comp_order.begin(), comp_order.end(),
              [&eigvals](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

    std::vector<double> projected(words.size() * q, 0.0);
    for (std::size_t w = 0; w < words.size(); ++w) {
        for (std::size_t c = 0; c < q; ++c) {
            const std::size_t comp = comp_order[c];
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                dot += centered[w * d + i] * eigvecs[i * d + comp];
            }
            projected[w * q + c] = dot;
        }
    }

    const auto ranking = neighbor_ranking(projected, words.size(), q, k);
    std::vector<std::pair<std::string, std::vector<std::string>>> result;
    result.reserve(words.size());
    for (std::size_t w = 0; w < words.size(); ++w) {
        std::vector<std::string> neighbors;
        neighbors.reserve(k);
        for (std::size_t idx : ranking[w]) neighbors.push_back(words[idx]);
        result.emplace_back(words[w], std::move(neighbors));
    }
    return result;
}

}  // namespace manualqa
