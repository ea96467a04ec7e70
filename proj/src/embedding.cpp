#include "manualqa/embedding.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace manualqa {

const std::vector<double>* EmbeddingTable::find(const std::string& token) const {
    auto it = vectors.find(token);
    return it == vectors.end() ? nullptr : &it->second;
}

EmbeddingTable read_embeddings(std::istream& in) {
    EmbeddingTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<double> vec;
        double v = 0.0;
        while (ss >> v) vec.push_back(v);
        if (token.empty() || vec.empty()) {
            throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                                     ": expected '<token> <v1> <v2> ...'");
        }
        if (table.dimension == 0) {
            table.dimension = vec.size();
        } else if (vec.size() != table.dimension) {
            throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                                     ": dimension mismatch");
        }
        table.vectors[token] = std::move(vec);
    }
    return table;
}

EmbeddingTable read_embeddings_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embeddings file: " + path);
    return read_embeddings(in);
}

void write_embeddings_file(const std::string& path, const EmbeddingTable& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embeddings file: " + path);
    std::vector<std::string> tokens;
    tokens.reserve(table.vectors.size());
    for (const auto& [token, vec] : table.vectors) tokens.push_back(token);
    std::sort(tokens.begin(), tokens.end());
    for (const auto& token : tokens) {
        out << token;
        for (double v : table.vectors.at(token)) out << ' ' << v;
        out << '\n';
    }
}

}  // namespace manualqa
