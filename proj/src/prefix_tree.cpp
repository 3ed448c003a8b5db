#include "riser/prefix_tree.hpp"

#include <algorithm>

namespace riser {

PrefixTree PrefixTree::build(const std::vector<TokenizedItem>& catalog, Token terminal) {
  PrefixTree tree(terminal);
  for (const auto& item : catalog) tree.insert(item);
  return tree;
}

void PrefixTree::insert(const TokenizedItem& item) {
  item.validate(terminal_);
  if (items_.count(item.tokens) != 0) {
    throw DuplicateItemError("item already present in prefix tree");
  }
  std::vector<Token> prefix;
  prefix.reserve(item.tokens.size());
  for (Token t : item.tokens) {
    auto& kids = children_[prefix];  // creates the entry on first touch
    auto it = std::lower_bound(kids.begin(), kids.end(), t);
    if (it == kids.end() || *it != t) kids.insert(it, t);
    prefix.push_back(t);
  }
  items_.insert(item.tokens);
}

const std::vector<Token>* PrefixTree::children(std::span<const Token> prefix) const {
  // unordered_map::find needs the key type; small copies are fine here.
  std::vector<Token> key(prefix.begin(), prefix.end());
  auto it = children_.find(key);
  return it == children_.end() ? nullptr : &it->second;
}

bool PrefixTree::is_valid_item(std::span<const Token> tokens) const {
  std::vector<Token> key(tokens.begin(), tokens.end());
  return items_.count(key) != 0;
}

CertaintyMask PrefixTree::certainty_mask(const TokenizedItem& item, double decay) const {
  if (decay < 0.0 || decay >= 1.0) {
    throw ContractViolation("mask decay must lie in [0, 1)");
  }
  CertaintyMask mask;
  mask.decay = decay;
  mask.weights.reserve(item.tokens.size());
  std::vector<Token> prefix;
  prefix.reserve(item.tokens.size());
  for (size_t j = 0; j < item.tokens.size(); ++j) {
    const auto* kids = children(prefix);
    if (kids == nullptr || kids->empty()) {
      throw OutOfCatalogError("mask requested for a sequence outside the catalog");
    }
    const bool final_token = (j + 1 == item.tokens.size());
    mask.weights.push_back((kids->size() > 1 || final_token) ? 1.0 : decay);
    prefix.push_back(item.tokens[j]);
  }
  return mask;
}

}  // namespace riser
