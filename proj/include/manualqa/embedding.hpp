#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace manualqa {

// Word-embedding lookup loaded from GloVe-style text: one token per line
// followed by its vector components, whitespace separated.
struct EmbeddingTable {
    std::size_t dimension = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;

    bool contains(const std::string& token) const { return vectors.count(token) > 0; }
    const std::vector<double>* find(const std::string& token) const;
};

EmbeddingTable read_embeddings(std::istream& in);
EmbeddingTable read_embeddings_file(const std::string& path);
void write_embeddings_file(const std::string& path, const EmbeddingTable& table);

}  // namespace manualqa
