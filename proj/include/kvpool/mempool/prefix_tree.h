// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kvpool/core/error.h"
#include "kvpool/core/types.h"

namespace kvpool {

// Block-granular radix tree over token sequences. Every edge holds a whole
// number of blocks and one value of type V per block. Children are ordered by
// their first block, so siblings always differ somewhere in that block.
//
// When Hash is not void the tree also keeps a value -> node map so a stored
// value can be found and rewritten in place (used for swaps).
template <typename V, typename Hash = void>
class PrefixTree {
 public:
  static constexpr bool kLocated = !std::is_void_v<Hash>;

  enum class Conflict { kKeepExisting, kStrict, kOverwrite };

  struct Node {
    std::uint64_t id = 0;
    Node* parent = nullptr;
    TokenList tokens;
    std::vector<V> values;
    std::vector<std::unique_ptr<Node>> children;
    SimTime last_access = 0.0;
    SimTime insert_time = 0.0;
    // A stored sequence ends exactly at the end of this node.
    bool terminal = false;

    std::size_t blocks() const { return values.size(); }
  };

  struct Step {
    Node* node = nullptr;
    std::size_t blocks = 0;  // leading blocks of `node` on the path
  };

  struct Path {
    std::vector<Step> steps;
    std::size_t blocks = 0;
  };

  struct InsertResult {
    std::vector<std::size_t> added;     // block positions whose value is now stored
    std::vector<std::size_t> kept;      // positions where a different existing value won
    std::vector<V> replaced;            // old values dropped under kOverwrite
  };

  explicit PrefixTree(std::uint32_t block_size) : block_size_(block_size) {
    root_ = std::make_unique<Node>();
  }

  PrefixTree(const PrefixTree&) = delete;
  PrefixTree& operator=(const PrefixTree&) = delete;
  PrefixTree(PrefixTree&&) noexcept = default;
  PrefixTree& operator=(PrefixTree&&) noexcept = default;

  std::uint32_t block_size() const { return block_size_; }
  const Node* root() const { return root_.get(); }
  Node* root() { return root_.get(); }
  bool empty() const { return root_->children.empty(); }
  std::size_t stored_blocks() const { return stored_blocks_; }

  // Longest block-aligned prefix of `query` present in the tree. `stop(node,
  // k)` returning true ends the walk before block k of node.
  template <typename Stop>
  Path walk(TokenSpan query, Stop&& stop) const {
    Path path;
    const Node* node = root_.get();
    std::size_t pos = 0;
    const std::size_t b = block_size_;
    while (pos + b <= query.size()) {
      Node* child = find_child(node, query.subspan(pos, b));
      if (child == nullptr) break;
      std::size_t k = 0;
      while (k < child->blocks() && pos + b <= query.size() &&
             std::equal(query.begin() + pos, query.begin() + pos + b,
                        child->tokens.begin() + k * b) &&
             !stop(*child, k)) {
        ++k;
        pos += b;
      }
      if (k == 0) break;
      path.steps.push_back({child, k});
      path.blocks += k;
      if (k < child->blocks()) break;
      node = child;
    }
    return path;
  }

  Path walk(TokenSpan query) const {
    return walk(query, [](const Node&, std::size_t) { return false; });
  }

  static std::vector<V> values(const Path& path) {
    std::vector<V> out;
    out.reserve(path.blocks);
    for (const auto& step : path.steps) {
      out.insert(out.end(), step.node->values.begin(),
                 step.node->values.begin() + static_cast<std::ptrdiff_t>(step.blocks));
    }
    return out;
  }

  static void touch(const Path& path, SimTime now) {
    for (const auto& step : path.steps) step.node->last_access = std::max(step.node->last_access, now);
  }

  // Stores the block-aligned `tokens` with one value per block. Under kStrict
  // a differing existing value throws ConflictingMapping before any change.
  InsertResult insert(TokenSpan tokens, std::span<const V> vals, SimTime now,
                      Conflict conflict = Conflict::kKeepExisting) {
    const std::size_t b = block_size_;
    const std::size_t n = tokens.size() / b;
    if (tokens.size() % b != 0 || vals.size() != n) {
      throw Error(ErrorCode::kAddrCountMismatch, "insert needs one value per full block");
    }
    if (conflict == Conflict::kStrict) {
      const auto existing = values(walk(tokens));
      for (std::size_t i = 0; i < existing.size(); ++i) {
        if (!(existing[i] == vals[i])) {
          throw Error(ErrorCode::kConflictingMapping, "block " + std::to_string(i) + " already mapped");
        }
      }
    }
    InsertResult result;
    Node* node = root_.get();
    std::size_t idx = 0;
    while (idx < n) {
      TokenSpan rest = tokens.subspan(idx * b);
      Node* child = find_child(node, rest.first(b));
      if (child == nullptr) {
        auto fresh = std::make_unique<Node>();
        fresh->id = next_id_++;
        fresh->parent = node;
        fresh->tokens.assign(rest.begin(), rest.end());
        fresh->values.assign(vals.begin() + static_cast<std::ptrdiff_t>(idx), vals.end());
        fresh->last_access = now;
        fresh->insert_time = now;
        fresh->terminal = true;
        for (std::size_t i = idx; i < n; ++i) result.added.push_back(i);
        stored_blocks_ += n - idx;
        if constexpr (kLocated) {
          for (const auto& v : fresh->values) locator_[v] = fresh.get();
        }
        attach(node, std::move(fresh));
        return result;
      }
      std::size_t k = 0;
      while (k < child->blocks() && idx + k < n &&
             std::equal(rest.begin() + k * b, rest.begin() + (k + 1) * b,
                        child->tokens.begin() + k * b)) {
        const V& incoming = vals[idx + k];
        V& current = child->values[k];
        if (!(current == incoming)) {
          if (conflict == Conflict::kOverwrite) {
            result.replaced.push_back(current);
            if constexpr (kLocated) {
              locator_.erase(current);
              locator_[incoming] = child;
            }
            current = incoming;
            result.added.push_back(idx + k);
          } else {
            result.kept.push_back(idx + k);
          }
        }
        ++k;
      }
      child->last_access = std::max(child->last_access, now);
      child->insert_time = std::max(child->insert_time, now);
      if (k < child->blocks()) split(child, k);
      idx += k;
      node = child;
    }
    if (node != root_.get()) node->terminal = true;
    return result;
  }

  // Unlinks the stored sequence equal to `tokens` (block-aligned). Returns the
  // values no longer reachable; empty when the sequence is not stored.
  std::vector<V> erase(TokenSpan tokens) {
    if (tokens.empty() || tokens.size() % block_size_ != 0) return {};
    const Path path = walk(tokens);
    if (path.blocks * block_size_ != tokens.size()) return {};
    Node* node = path.steps.back().node;
    if (path.steps.back().blocks != node->blocks() || !node->terminal) return {};
    node->terminal = false;
    return prune(node);
  }

  // Removes the final block of a childless node; an emptied node is unlinked
  // and the sequence through it now ends at its parent.
  V pop_tail(Node* leaf) {
    V v = leaf->values.back();
    leaf->values.pop_back();
    leaf->tokens.resize(leaf->values.size() * block_size_);
    --stored_blocks_;
    if constexpr (kLocated) locator_.erase(v);
    if (leaf->values.empty()) {
      Node* parent = leaf->parent;
      detach(leaf);
      if (parent != root_.get()) parent->terminal = true;
    }
    return v;
  }

  // Drops blocks [offset, end) of `node` and its whole subtree. Sequences
  // through the cut now end just before it.
  std::vector<V> cut(Node* node, std::size_t offset) {
    std::vector<V> removed;
    if (offset == 0) {
      collect(node, removed);
      Node* parent = node->parent;
      detach(node);
      if (parent != root_.get()) parent->terminal = true;
    } else {
      for (auto& c : node->children) collect(c.get(), removed);
      node->children.clear();
      for (std::size_t i = offset; i < node->values.size(); ++i) {
        removed.push_back(node->values[i]);
        if constexpr (kLocated) locator_.erase(node->values[i]);
      }
      stored_blocks_ -= node->values.size() - offset;
      node->values.resize(offset);
      node->tokens.resize(offset * block_size_);
      node->terminal = true;
    }
    return removed;
  }

  std::optional<std::pair<Node*, std::size_t>> find(const V& v) const
    requires kLocated
  {
    auto it = locator_.find(v);
    if (it == locator_.end()) return std::nullopt;
    Node* node = it->second;
    auto pos = std::find(node->values.begin(), node->values.end(), v);
    return std::make_pair(node, static_cast<std::size_t>(pos - node->values.begin()));
  }

  bool contains(const V& v) const
    requires kLocated
  {
    return locator_.contains(v);
  }

  void replace(const V& old_value, const V& new_value)
    requires kLocated
  {
    auto loc = find(old_value);
    if (!loc) throw Error(ErrorCode::kPrecondition, "value not indexed");
    loc->first->values[loc->second] = new_value;
    locator_.erase(old_value);
    locator_[new_value] = loc->first;
  }

  // Preorder, children in first-block order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    std::vector<std::pair<const Node*, std::size_t>> stack;  // node, depth in blocks
    for (auto it = root_->children.rbegin(); it != root_->children.rend(); ++it) {
      stack.emplace_back(it->get(), 0);
    }
    while (!stack.empty()) {
      auto [node, depth] = stack.back();
      stack.pop_back();
      fn(*node, depth);
      for (auto it = node->children.rbegin(); it != node->children.rend(); ++it) {
        stack.emplace_back(it->get(), depth + node->blocks());
      }
    }
  }

  std::vector<Node*> leaves() const {
    std::vector<Node*> out;
    for_each([&out](const Node& n, std::size_t) {
      if (n.children.empty()) out.push_back(const_cast<Node*>(&n));
    });
    return out;
  }

  static std::size_t depth_blocks(const Node* node) {
    std::size_t d = 0;
    for (const Node* p = node->parent; p != nullptr; p = p->parent) d += p->blocks();
    return d;
  }

  // Structural checks; throws Precondition on the first violation.
  void check_invariants() const {
    std::size_t count = 0;
    auto fail = [](const char* what) { throw Error(ErrorCode::kPrecondition, what); };
    for_each([&](const Node& n, std::size_t) {
      if (n.values.empty()) fail("empty non-root node");
      if (n.tokens.size() != n.values.size() * block_size_) fail("token/value length mismatch");
      if (n.children.empty() && !n.terminal) fail("non-terminal leaf");
      if (!n.terminal && n.children.size() == 1) fail("unmerged single-child node");
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        if (n.children[i]->parent != &n) fail("bad parent link");
        if (i > 0 && !block_less(n.children[i - 1]->tokens, n.children[i]->tokens)) {
          fail("children not strictly ordered by first block");
        }
      }
      if constexpr (kLocated) {
        for (const auto& v : n.values) {
          auto it = locator_.find(v);
          if (it == locator_.end() || it->second != &n) fail("locator out of sync");
        }
      }
      count += n.values.size();
    });
    if (count != stored_blocks_) fail("stored block count drift");
    if constexpr (kLocated) {
      if (locator_.size() != stored_blocks_) fail("locator size drift");
    }
  }

 private:
  struct NoLocator {};
  using Locator = std::conditional_t<kLocated, std::unordered_map<V, Node*, std::conditional_t<kLocated, Hash, std::hash<int>>>, NoLocator>;

  bool block_less(const TokenList& a, const TokenList& b) const {
    return std::lexicographical_compare(a.begin(), a.begin() + block_size_, b.begin(),
                                        b.begin() + block_size_);
  }

  Node* find_child(const Node* node, TokenSpan key) const {
    const auto& kids = node->children;
    auto it = std::lower_bound(kids.begin(), kids.end(), key,
                               [this](const std::unique_ptr<Node>& c, TokenSpan k) {
                                 return std::lexicographical_compare(
                                     c->tokens.begin(), c->tokens.begin() + block_size_, k.begin(),
                                     k.end());
                               });
    if (it == kids.end() || !std::equal(key.begin(), key.end(), (*it)->tokens.begin())) {
      return nullptr;
    }
    return it->get();
  }

  void attach(Node* parent, std::unique_ptr<Node> child) {
    child->parent = parent;
    auto& kids = parent->children;
    auto it = std::lower_bound(kids.begin(), kids.end(), child,
                               [this](const std::unique_ptr<Node>& a, const std::unique_ptr<Node>& b) {
                                 return block_less(a->tokens, b->tokens);
                               });
    kids.insert(it, std::move(child));
  }

  void detach(Node* node) {
    auto& kids = node->parent->children;
    kids.erase(std::find_if(kids.begin(), kids.end(),
                            [node](const std::unique_ptr<Node>& c) { return c.get() == node; }));
  }

  // `node` keeps its first k blocks; the rest moves to a new only child.
  void split(Node* node, std::size_t k) {
    const std::size_t b = block_size_;
    auto lower = std::make_unique<Node>();
    lower->id = next_id_++;
    lower->parent = node;
    lower->tokens.assign(node->tokens.begin() + static_cast<std::ptrdiff_t>(k * b), node->tokens.end());
    lower->values.assign(node->values.begin() + static_cast<std::ptrdiff_t>(k), node->values.end());
    lower->children = std::move(node->children);
    for (auto& c : lower->children) c->parent = lower.get();
    lower->terminal = node->terminal;
    lower->last_access = node->last_access;
    lower->insert_time = node->insert_time;
    node->tokens.resize(k * b);
    node->values.resize(k);
    node->terminal = false;
    node->children.clear();
    if constexpr (kLocated) {
      for (const auto& v : lower->values) locator_[v] = lower.get();
    }
    node->children.push_back(std::move(lower));
  }

  void merge_with_child(Node* node) {
    std::unique_ptr<Node> child = std::move(node->children.front());
    node->children.clear();
    node->tokens.insert(node->tokens.end(), child->tokens.begin(), child->tokens.end());
    node->values.insert(node->values.end(), child->values.begin(), child->values.end());
    node->children = std::move(child->children);
    for (auto& c : node->children) c->parent = node;
    node->terminal = child->terminal;
    node->last_access = std::max(node->last_access, child->last_access);
    node->insert_time = std::max(node->insert_time, child->insert_time);
    if constexpr (kLocated) {
      for (const auto& v : child->values) locator_[v] = node;
    }
  }

  std::vector<V> prune(Node* node) {
    std::vector<V> removed;
    while (node != root_.get() && !node->terminal && node->children.empty()) {
      Node* parent = node->parent;
      for (const auto& v : node->values) {
        removed.push_back(v);
        if constexpr (kLocated) locator_.erase(v);
      }
      stored_blocks_ -= node->values.size();
      detach(node);
      node = parent;
    }
    if (node != root_.get() && !node->terminal && node->children.size() == 1) merge_with_child(node);
    return removed;
  }

  void collect(Node* node, std::vector<V>& out) {
    for (const auto& v : node->values) {
      out.push_back(v);
      if constexpr (kLocated) locator_.erase(v);
    }
    stored_blocks_ -= node->values.size();
    for (auto& c : node->children) collect(c.get(), out);
  }

  std::uint32_t block_size_;
  std::unique_ptr<Node> root_;
  std::uint64_t next_id_ = 1;
  std::size_t stored_blocks_ = 0;
  [[no_unique_address]] Locator locator_;
};

}  // namespace kvpool
