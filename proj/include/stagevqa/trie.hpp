#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stagevqa {

/// Prefix index keyed by token sequences. Nodes live in one vector; node 0 is
/// the root.
template <class Value>
class TokenTrie {
 public:
  struct Match {
    std::size_t length = 0;  // tokens consumed
    const Value* value = nullptr;
  };

  TokenTrie() : nodes_(1) {}

  /// Returns false (and keeps the existing value) if the sequence is present.
  template <class Tokens>
  bool insert(const Tokens& tokens, Value value) {
    std::size_t node = 0;
    for (const auto& tok : tokens) {
      auto it = nodes_[node].children.find(std::string(tok));
      if (it == nodes_[node].children.end()) {
        nodes_.emplace_back();
        it = nodes_[node].children.emplace(std::string(tok), nodes_.size() - 1).first;
      }
      node = it->second;
    }
    if (node == 0 || nodes_[node].value) return false;
    nodes_[node].value = std::move(value);
    ++size_;
    return true;
  }

  template <class Tokens>
  const Value* find(const Tokens& tokens) const {
    std::size_t node = 0;
    for (const auto& tok : tokens) {
      const auto it = nodes_[node].children.find(std::string(tok));
      if (it == nodes_[node].children.end()) return nullptr;
      node = it->second;
    }
    return nodes_[node].value ? &*nodes_[node].value : nullptr;
  }

  /// Longest stored sequence that is a prefix of tokens[start..], read via
  /// `key(tokens[i])`.
  template <class Tokens, class Key>
  std::optional<Match> longest_match(const Tokens& tokens, std::size_t start, Key key) const {
    std::optional<Match> best;
    std::size_t node = 0;
    for (std::size_t i = start; i < tokens.size(); ++i) {
      const auto it = nodes_[node].children.find(key(tokens[i]));
      if (it == nodes_[node].children.end()) break;
      node = it->second;
      if (nodes_[node].value) best = Match{i - start + 1, &*nodes_[node].value};
    }
    return best;
  }

  std::size_t size() const noexcept { return size_; }

 private:
  struct Node {
    std::map<std::string, std::size_t, std::less<>> children;
    std::optional<Value> value;
  };
  std::vector<Node> nodes_;
  std::size_t size_ = 0;
};

}  // namespace stagevqa
