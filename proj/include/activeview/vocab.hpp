#pragma once

// Closed vocabulary of the instruction template language. Numbers are spelled
// digit by digit; detokenize re-joins adjacent digits.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace av {

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int32_t kPadToken = 0;

int vocab_size();
std::string_view token_text(int32_t token);
/// Throws VocabError for out-of-vocabulary words.
int32_t token_id(std::string_view word);
bool is_digit_token(int32_t token);

std::vector<int32_t> tokenize(std::string_view text);
std::string detokenize(std::span<const int32_t> tokens);

/// Functional intent phrases selectable by InstructionSpec::functional_suffix.
std::span<const std::string_view> functional_phrases();

}  // namespace av
