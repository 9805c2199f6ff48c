#ifndef STYLEBLEND_VOCAB_HPP
#define STYLEBLEND_VOCAB_HPP

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace styleblend {

// Tokenized prompt: fixed-length id sequence over the closed vocabulary.
struct PromptTokens {
    std::vector<int> ids;
    std::string text;
};

// Closed word-level vocabulary: template words, class names, the style
// identifiers "<T>" / "<C>", the rare token used to seat e_C, and padding.
class Vocabulary {
public:
    static constexpr int kMaxLen = 8;

    Vocabulary() {
        static const char* words[] = {"<pad>", "a",     "in",    "the",  "style", "of",   ".",   "circle", "square",
                                      "triangle", "star", "cross", "ring", "artistic", "!", "<T>", "<C>"};
        for (const char* w : words) {
            index_[w] = static_cast<int>(tokens_.size());
            tokens_.push_back(w);
        }
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int pad_id() const { return 0; }
    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw std::invalid_argument("unknown word: '" + word + "'");
        return it->second;
    }
    const std::string& word(int id) const { return tokens_.at(static_cast<size_t>(id)); }
    int texture_token() const { return id("<T>"); }
    int composition_token() const { return id("<C>"); }
    int rare_token() const { return id("!"); }
    int style_seed_token() const { return id("artistic"); }

    PromptTokens tokenize(const std::string& text) const {
        PromptTokens out;
        out.text = text;
        std::istringstream is(text);
        std::string w;
        auto lookup = [&](std::string word) {
            // exact match first so "<T>"/"<C>" survive; plain words fold to lower case
            if (index_.count(word)) return index_.at(word);
            std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
            return id(word);
        };
        while (is >> w) {
            // split a trailing period into its own token
            if (w.size() > 1 && w.back() == '.') {
                out.ids.push_back(lookup(w.substr(0, w.size() - 1)));
                w = ".";
            }
            out.ids.push_back(lookup(w));
        }
        if (static_cast<int>(out.ids.size()) > kMaxLen)
            throw std::invalid_argument("prompt too long (max " + std::to_string(kMaxLen) + " tokens): " + text);
        while (static_cast<int>(out.ids.size()) < kMaxLen) out.ids.push_back(pad_id());
        return out;
    }

    bool contains(const PromptTokens& p, int token_id) const {
        return std::find(p.ids.begin(), p.ids.end(), token_id) != p.ids.end();
    }

    // the prompt templates used throughout
    PromptTokens prompt_bare(const std::string& cls) const { return tokenize("a " + cls + " ."); }
    PromptTokens prompt_texture(const std::string& cls) const { return tokenize("a " + cls + " in the style of <T>"); }
    PromptTokens prompt_composition(const std::string& cls) const {
        return tokenize("a " + cls + " in the style of <C>");
    }
    PromptTokens prompt_artistic(const std::string& cls) const {
        return tokenize("a " + cls + " in the style of artistic");
    }
    PromptTokens prompt_empty() const { return tokenize(""); }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

inline const Vocabulary& vocab() {
    static const Vocabulary v;
    return v;
}

}  // namespace styleblend

#endif
