#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovml {

// Word-level tokenizer with a closed vocabulary. Text is lowercased,
// punctuation is stripped, and words are split on whitespace. Special ids
// occupy the bottom of the id space; word ids are dense above them.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEot = 2;
    static constexpr int kUnk = 3;
    static constexpr int kDecoderStart = 4;
    static constexpr int kNumSpecials = 5;

    Tokenizer() = default;

    explicit Tokenizer(const std::vector<std::string>& words) {
        for (const auto& w : words) add_word(w);
    }

    void add_word(const std::string& raw) {
        for (const std::string& w : split_normalized(raw)) {
            if (!word_to_id_.count(w)) {
                const int id = kNumSpecials + static_cast<int>(id_to_word_.size());
                word_to_id_[w] = id;
                id_to_word_.push_back(w);
            }
        }
    }

    int vocab_size() const { return kNumSpecials + static_cast<int>(id_to_word_.size()); }

    static std::string normalize(const std::string& text) {
        std::string out;
        out.reserve(text.size());
        for (char c : text) {
            const unsigned char u = static_cast<unsigned char>(c);
            if (std::isalnum(u))
                out.push_back(static_cast<char>(std::tolower(u)));
            else if (std::isspace(u))
                out.push_back(' ');
            // punctuation stripped
        }
        return out;
    }

    static std::vector<std::string> split_normalized(const std::string& text) {
        std::istringstream ss(normalize(text));
        std::vector<std::string> words;
        std::string w;
        while (ss >> w) words.push_back(w);
        return words;
    }

    // Unknown words map to UNK; EOT is appended. Empty text gives [EOT].
    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> ids;
        for (const std::string& w : split_normalized(text)) {
            auto it = word_to_id_.find(w);
            ids.push_back(it == word_to_id_.end() ? kUnk : it->second);
        }
        ids.push_back(kEot);
        return ids;
    }

    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < kNumSpecials) continue;
            const int w = id - kNumSpecials;
            if (w >= static_cast<int>(id_to_word_.size()))
                throw std::runtime_error("detokenize: id out of range");
            if (!out.empty()) out.push_back(' ');
            out += id_to_word_[w];
        }
        return out;
    }

    bool has_word(const std::string& w) const { return word_to_id_.count(normalize(w)) != 0; }

    // Line-oriented "word<TAB>id" format, specials omitted.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
        for (std::size_t i = 0; i < id_to_word_.size(); ++i)
            out << id_to_word_[i] << '\t' << (kNumSpecials + i) << '\n';
    }

    static Tokenizer load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
        Tokenizer tok;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw std::runtime_error("bad vocabulary line: " + line);
            const std::string word = line.substr(0, tab);
            const int id = std::stoi(line.substr(tab + 1));
            const int expected = tok.vocab_size();
            if (id != expected) throw std::runtime_error("non-dense vocabulary id: " + line);
            tok.add_word(word);
        }
        return tok;
    }

private:
    std::map<std::string, int> word_to_id_;
    std::vector<std::string> id_to_word_;
};

}  // namespace ovml
