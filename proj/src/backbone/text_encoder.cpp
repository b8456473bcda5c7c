#include "iconsal/backbone/text_encoder.hpp"

#include <cctype>
#include <random>

#include "iconsal/core/hash.hpp"

namespace iconsal {

std::vector<std::string> tokenize_prompt(std::string_view prompt) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : prompt) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

std::vector<double> HashTextEncoder::encode(std::string_view prompt) const {
    auto tokens = tokenize_prompt(prompt);
    if (tokens.empty()) tokens.emplace_back(prompt);
    std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& tok : tokens) {
        std::mt19937_64 rng(fnv1a64(tok, seed_ ^ 0x9e3779b97f4a7c15ULL));
        for (auto& v : out) v += symmetric_unit(rng);
    }
    return out;
}

}  // namespace iconsal
