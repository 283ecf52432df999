#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "retina/errors.hpp"
#include "retina/metrics.hpp"

namespace retina::cascade {

// Binary decision node: the node's sigmoid score is the probability of the
// right branch, 1 - score of the left. A side with more than one class must
// carry a child refining it.
struct CascadeNode {
  std::string name;
  std::string model_ref;  // checkpoint base path for this node's binary model
  std::vector<int> left_classes;
  std::vector<int> right_classes;
  std::unique_ptr<CascadeNode> left_child;
  std::unique_ptr<CascadeNode> right_child;
};

struct CascadeTree {
  std::unique_ptr<CascadeNode> root;
  int num_classes = 5;
};

namespace detail {

inline void validate_node(const CascadeNode& node, std::set<int>& seen_leaves) {
  if (node.left_classes.empty() || node.right_classes.empty()) {
    fail(Errc::ConfigError, "cascade node '" + node.name + "' has an empty side");
  }
  std::set<int> left(node.left_classes.begin(), node.left_classes.end());
  std::set<int> right(node.right_classes.begin(), node.right_classes.end());
  for (int c : left) {
    if (right.count(c)) {
      fail(Errc::ConfigError,
           "cascade node '" + node.name + "': class " + std::to_string(c) + " on both sides");
    }
  }
  auto check_side = [&](const std::vector<int>& classes, const CascadeNode* child,
                        const char* side) {
    if (classes.size() == 1 && !child) {
      if (!seen_leaves.insert(classes[0]).second) {
        fail(Errc::ConfigError, "class " + std::to_string(classes[0]) +
                                    " reachable by more than one path");
      }
      return;
    }
    if (!child) {
      fail(Errc::ConfigError, "cascade node '" + node.name + "' " + side +
                                  " side has multiple classes but no child");
    }
    std::set<int> expect(classes.begin(), classes.end());
    std::set<int> got(child->left_classes.begin(), child->left_classes.end());
    got.insert(child->right_classes.begin(), child->right_classes.end());
    if (expect != got) {
      fail(Errc::ConfigError,
           "cascade node '" + child->name + "' does not partition its parent side");
    }
    validate_node(*child, seen_leaves);
  };
  check_side(node.left_classes, node.left_child.get(), "left");
  check_side(node.right_classes, node.right_child.get(), "right");
}

}  // namespace detail

// Leaves must partition {0..num_classes-1}, each grade reachable exactly once.
inline void validate(const CascadeTree& tree) {
  if (!tree.root) fail(Errc::ConfigError, "cascade tree has no root");
  std::set<int> leaves;
  detail::validate_node(*tree.root, leaves);
  for (int c = 0; c < tree.num_classes; ++c) {
    if (!leaves.count(c)) {
      fail(Errc::ConfigError, "class " + std::to_string(c) + " unreachable in cascade");
    }
  }
  if (static_cast<int>(leaves.size()) != tree.num_classes) {
    fail(Errc::ConfigError, "cascade leaves exceed the class set");
  }
}

// Mirrors the grade grouping hierarchy: no-DR peels off first, then the
// mild/moderate group splits from severe/proliferate, then singles.
inline CascadeTree build_default_tree() {
  auto leaf_pair = [](std::string name, int left, int right) {
    auto node = std::make_unique<CascadeNode>();
    node->name = std::move(name);
    node->left_classes = {left};
    node->right_classes = {right};
    return node;
  };

  auto severity = std::make_unique<CascadeNode>();
  severity->name = "severity";
  severity->left_classes = {1, 2};
  severity->right_classes = {3, 4};
  severity->left_child = leaf_pair("mild_vs_moderate", 1, 2);
  severity->right_child = leaf_pair("severe_vs_proliferate", 3, 4);

  auto root = std::make_unique<CascadeNode>();
  root->name = "root";
  root->left_classes = {0};
  root->right_classes = {1, 2, 3, 4};
  root->right_child = std::move(severity);

  CascadeTree tree;
  tree.root = std::move(root);
  tree.num_classes = 5;
  validate(tree);
  return tree;
}

inline int count_internal_nodes(const CascadeNode& node) {
  int n = 1;
  if (node.left_child) n += count_internal_nodes(*node.left_child);
  if (node.right_child) n += count_internal_nodes(*node.right_child);
  return n;
}

// Class probability = product of branch probabilities along its root-to-leaf
// path. The result is a probability vector by construction.
inline std::vector<double> path_probabilities(const CascadeTree& tree,
                                              const std::map<std::string, double>& node_scores) {
  validate(tree);
  std::vector<double> probs(static_cast<std::size_t>(tree.num_classes), 0.0);

  std::function<void(const CascadeNode&, double)> walk = [&](const CascadeNode& node,
                                                             double mass) {
    auto it = node_scores.find(node.name);
    if (it == node_scores.end()) {
      fail(Errc::MissingScore, "no score for cascade node '" + node.name + "'");
    }
    const double s = it->second;
    if (s < 0.0 || s > 1.0 || !std::isfinite(s)) {
      fail(Errc::ScoreOutOfRange, "node '" + node.name + "' score " + std::to_string(s));
    }
    auto descend = [&](const std::vector<int>& classes, const CascadeNode* child,
                       double branch_mass) {
      if (child) {
        walk(*child, branch_mass);
      } else {
        probs[static_cast<std::size_t>(classes[0])] += branch_mass;
      }
    };
    descend(node.left_classes, node.left_child.get(), mass * (1.0 - s));
    descend(node.right_classes, node.right_child.get(), mass * s);
  };
  walk(*tree.root, 1.0);
  return probs;
}

inline int cascade_predict(const CascadeTree& tree,
                           const std::map<std::string, double>& node_scores) {
  return metrics::argmax_decision(path_probabilities(tree, node_scores));
}

// ---------------------------------------------------------------------------
// JSON description: node tree with class partitions and checkpoint paths.

inline nlohmann::json node_to_json(const CascadeNode& node) {
  nlohmann::json j;
  j["name"] = node.name;
  j["model"] = node.model_ref;
  j["left"] = node.left_classes;
  j["right"] = node.right_classes;
  if (node.left_child) j["left_child"] = node_to_json(*node.left_child);
  if (node.right_child) j["right_child"] = node_to_json(*node.right_child);
  return j;
}

inline nlohmann::json tree_to_json(const CascadeTree& tree) {
  nlohmann::json j;
  j["classes"] = tree.num_classes;
  j["root"] = node_to_json(*tree.root);
  return j;
}

inline std::unique_ptr<CascadeNode> node_from_json(const nlohmann::json& j) {
  auto node = std::make_unique<CascadeNode>();
  node->name = j.at("name").get<std::string>();
  node->model_ref = j.value("model", std::string{});
  node->left_classes = j.at("left").get<std::vector<int>>();
  node->right_classes = j.at("right").get<std::vector<int>>();
  if (j.contains("left_child")) node->left_child = node_from_json(j.at("left_child"));
  if (j.contains("right_child")) node->right_child = node_from_json(j.at("right_child"));
  return node;
}

inline CascadeTree tree_from_json(const nlohmann::json& j) {
  CascadeTree tree;
  tree.num_classes = j.value("classes", 5);
  tree.root = node_from_json(j.at("root"));
  validate(tree);
  return tree;
}

// All internal nodes in stable (pre-order) listing.
inline void collect_nodes(const CascadeNode& node, std::vector<const CascadeNode*>& out) {
  out.push_back(&node);
  if (node.left_child) collect_nodes(*node.left_child, out);
  if (node.right_child) collect_nodes(*node.right_child, out);
}

}  // namespace retina::cascade
