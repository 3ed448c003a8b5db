#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "riser/errors.hpp"

namespace riser {

/// Index into a fixed token vocabulary.
using Token = int32_t;

// Reserved vocabulary slots. Content tokens start at kFirstContentToken.
inline constexpr Token kInstrToken = 0;     // instruction block
inline constexpr Token kSepToken = 1;       // separates history items
inline constexpr Token kRespToken = 2;      // response-start marker
inline constexpr Token kTerminalToken = 3;  // ends every item sequence
inline constexpr Token kFirstContentToken = 4;

/// An item as its fixed token sequence. The last token is always the
/// terminal token and the terminal appears nowhere else.
struct TokenizedItem {
  std::vector<Token> tokens;

  bool operator==(const TokenizedItem& other) const { return tokens == other.tokens; }
  size_t size() const { return tokens.size(); }

  /// Throws MalformedItemError unless the sequence is [content..., terminal]
  /// with at least one content token.
  void validate(Token terminal) const {
    if (tokens.size() < 2) {
      throw MalformedItemError("item must have at least one content token plus terminal");
    }
    if (tokens.back() != terminal) {
      throw MalformedItemError("item does not end with the terminal token");
    }
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (tokens[i] == terminal) {
        throw MalformedItemError("terminal token appears before the end of the item");
      }
      if (tokens[i] < 0) throw MalformedItemError("negative token id");
    }
  }
};

inline uint64_t hash_tokens(std::span<const Token> tokens) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (Token t : tokens) {
    h ^= static_cast<uint64_t>(static_cast<uint32_t>(t));
    h *= 0x100000001b3ull;
  }
  return h;
}

/// The item universe: fixed token sequences plus vocabulary layout.
struct ItemCatalog {
  std::vector<TokenizedItem> items;
  int32_t vocab_size{0};
  Token terminal{kTerminalToken};

  const TokenizedItem& by_id(int32_t id) const {
    if (id < 0 || id >= static_cast<int32_t>(items.size())) {
      throw DataError("item id out of range: " + std::to_string(id));
    }
    return items[static_cast<size_t>(id)];
  }
  int32_t size() const { return static_cast<int32_t>(items.size()); }
};

}  // namespace riser
