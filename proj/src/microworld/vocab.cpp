#include "activeview/vocab.hpp"

#include <array>
#include <cctype>
#include <unordered_map>

#include "activeview/scene.hpp"

namespace av {

namespace {

constexpr std::array<std::string_view, 35> kWords = {
    "<pad>", "inspect", "the", "cabinet", "sink", "couch", "table", "lamp", "bed", "chair",
    "shelf", "tv", "plant", "fridge", "desk", "from", "an", "eye-level", "view", "above",
    "up", "close", "to", "its", "contents", "check", "surface", "see", "if", "it",
    "is", "clean", "look", "at", "front"};

constexpr std::array<std::string_view, 15> kSymbols = {
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "(", ",", ")", "in", "image"};

constexpr int kDigitBase = static_cast<int>(kWords.size());

constexpr std::array<std::string_view, 4> kFunctional = {
    "to inspect its contents", "to check its surface", "to see if it is clean",
    "to look at its front"};

const std::unordered_map<std::string_view, int32_t>& lookup() {
  static const auto table = [] {
    std::unordered_map<std::string_view, int32_t> m;
    for (size_t i = 0; i < kWords.size(); ++i) m.emplace(kWords[i], static_cast<int32_t>(i));
    for (size_t i = 0; i < kSymbols.size(); ++i) {
      m.emplace(kSymbols[i], static_cast<int32_t>(kDigitBase + i));
    }
    return m;
  }();
  return table;
}

}  // namespace

int vocab_size() { return static_cast<int>(kWords.size() + kSymbols.size()); }

std::string_view token_text(int32_t token) {
  if (token < 0 || token >= vocab_size()) {
    throw VocabError("token id out of range: " + std::to_string(token));
  }
  if (token < kDigitBase) return kWords[token];
  return kSymbols[token - kDigitBase];
}

int32_t token_id(std::string_view word) {
  const auto& m = lookup();
  auto it = m.find(word);
  if (it == m.end()) throw VocabError("out-of-vocabulary word: '" + std::string(word) + "'");
  return it->second;
}

bool is_digit_token(int32_t token) { return token >= kDigitBase && token < kDigitBase + 10; }

std::vector<int32_t> tokenize(std::string_view text) {
  std::vector<int32_t> out;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    const std::string_view word = text.substr(i, j - i);
    bool numeric = true;
    for (char c : word) numeric = numeric && std::isdigit(static_cast<unsigned char>(c));
    if (numeric) {
      for (char c : word) out.push_back(kDigitBase + (c - '0'));
    } else {
      out.push_back(token_id(word));
    }
    i = j;
  }
  return out;
}

std::string detokenize(std::span<const int32_t> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const bool glue = i > 0 && is_digit_token(tokens[i]) && is_digit_token(tokens[i - 1]);
    if (i > 0 && !glue) out += ' ';
    out += token_text(tokens[i]);
  }
  return out;
}

std::span<const std::string_view> functional_phrases() { return kFunctional; }

}  // namespace av
