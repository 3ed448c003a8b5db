#pragma once

#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "riser/tokens.hpp"

namespace riser {

/// Per-token weights over an item sequence: 1 at branching points and at the
/// final token, the decay coefficient everywhere else.
struct CertaintyMask {
  std::vector<double> weights;
  double decay{0.0};

  double sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Prefix tree over tokenized item ids, backed by a hash map from prefix to
/// the sorted set of valid next tokens. Insert-only; inserting an item of
/// length l touches at most l entries. Reads are side-effect free, so the
/// tree can be shared across rollout workers once built.
class PrefixTree {
 public:
  explicit PrefixTree(Token terminal = kTerminalToken) : terminal_(terminal) {}

  static PrefixTree build(const std::vector<TokenizedItem>& catalog,
                          Token terminal = kTerminalToken);

  /// O(l). Throws DuplicateItemError if the item is present and
  /// MalformedItemError if the terminal-token layout is wrong.
  void insert(const TokenizedItem& item);

  /// Sorted valid next tokens after `prefix`, or nullptr for prefixes that no
  /// item passes through. The empty prefix is a legal key.
  const std::vector<Token>* children(std::span<const Token> prefix) const;

  bool contains_prefix(std::span<const Token> prefix) const {
    return children(prefix) != nullptr;
  }

  /// True iff `tokens` is exactly an inserted item's full sequence.
  bool is_valid_item(std::span<const Token> tokens) const;

  /// Weight per position of `item`: 1 where the preceding prefix branches
  /// (more than one child) or at the final token, `decay` otherwise.
  /// Every prefix of `item` must be in the tree (OutOfCatalogError otherwise).
  CertaintyMask certainty_mask(const TokenizedItem& item, double decay) const;

  size_t item_count() const { return items_.size(); }
  /// Number of stored prefix keys (shared prefixes are stored once).
  size_t entry_count() const { return children_.size(); }
  Token terminal() const { return terminal_; }

 private:
  struct SeqHash {
    size_t operator()(const std::vector<Token>& v) const {
      return static_cast<size_t>(hash_tokens(v));
    }
  };

  // Hash collisions resolve through the full-key equality check below.
  struct SeqEq {
    bool operator()(const std::vector<Token>& a, const std::vector<Token>& b) const {
      return a == b;
    }
  };

  Token terminal_;
  std::unordered_map<std::vector<Token>, std::vector<Token>, SeqHash, SeqEq> children_;
  std::unordered_set<std::vector<Token>, SeqHash, SeqEq> items_;
};

}  // namespace riser
