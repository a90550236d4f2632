#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "sser/estimators.hpp"
#include "sser/input_model.hpp"
#include "sser/sse_tree.hpp"

namespace sser {

using Json = nlohmann::json;

inline constexpr const char* kTreeSchema = "sser-tree/1";

/// Shortest decimal string that reads back to the same double.
std::string format_double(double v);

/// {"variables": [{name, family, mean, std, truncation}], "correlation": [[...]]}
Json input_model_to_json(const InputModel& model);
/// Throws std::invalid_argument on malformed blocks.
InputModel input_model_from_json(const Json& j);

Json node_key_to_json(NodeKey k);
NodeKey node_key_from_json(const Json& j);

/// Non-finite values become null.
Json number_or_null(double v);

Json failure_estimate_to_json(const FailureEstimate& e);

/// Whole tree: input model, nodes with boxes and expansions, terminal set,
/// experimental design, and (optionally) per-terminal conditional estimates.
Json tree_to_json(const SseTree& tree, const std::map<NodeKey, ConditionalEstimate>* conditionals = nullptr,
                  bool include_replications = true);

struct LoadedTree {
  SseTree tree;
  std::map<NodeKey, double> conditional_pf;
};

/// Throws std::invalid_argument on schema mismatch.
LoadedTree tree_from_json(const Json& j);

}  // namespace sser
