#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace iconsal {

/// Lowercased alphanumeric word tokens.
std::vector<std::string> tokenize_prompt(std::string_view prompt);

/// Bag-of-tokens text encoder for the synthetic backbones: every token maps to
/// a fixed pseudo-random vector derived from the token and the model seed, and
/// the prompt embedding is their sum.
class HashTextEncoder {
public:
    HashTextEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

    std::vector<double> encode(std::string_view prompt) const;
    int dim() const { return dim_; }

private:
    int dim_;
    std::uint64_t seed_;
};

}  // namespace iconsal
