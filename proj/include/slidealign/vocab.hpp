#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace slidealign {

/// Whitespace-token vocabulary with fixed reserved ids.
class Vocabulary {
public:
    static constexpr int PAD = 0;
    static constexpr int CLS = 1;
    static constexpr int BOS = 2;
    static constexpr int EOS = 3;
    static constexpr int UNK = 4;
    static constexpr int NUM_RESERVED = 5;

    Vocabulary() = default;

    /// Builds from a set of tokens; insertion order is the sorted order of
    /// the set, so the same token set always yields the same id assignment.
    static Vocabulary from_tokens(const std::set<std::string>& tokens) {
        Vocabulary v;
        for (const auto& t : tokens) v.add(t);
        return v;
    }

    int add(const std::string& token) {
        if (token.empty()) throw std::invalid_argument("Vocabulary: empty token");
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        const int id = NUM_RESERVED + static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        ids_.emplace(token, id);
        return id;
    }

    int id(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? UNK : it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    std::string token(int id) const {
        switch (id) {
            case PAD: return "<pad>";
            case CLS: return "<cls>";
            case BOS: return "<bos>";
            case EOS: return "<eos>";
            case UNK: return "<unk>";
            default: break;
        }
        const int k = id - NUM_RESERVED;
        if (k < 0 || k >= static_cast<int>(tokens_.size()))
            throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
        return tokens_[k];
    }

    /// Total id count including the reserved ids.
    int size() const { return NUM_RESERVED + static_cast<int>(tokens_.size()); }

    // One token per line; line number equals id minus the reserved offset.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("Vocabulary: cannot write " + path);
        for (const auto& t : tokens_) out << t << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("Vocabulary: cannot read " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) v.add(line);
        }
        return v;
    }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace slidealign
