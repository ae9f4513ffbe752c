#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prunekit/criteria.hpp"

namespace prunekit {

// Glob with '*' (any run of characters, including none) and '?' (any single
// character). '*' crosses '.' boundaries, so "head.*" covers "head.cls.0".
inline bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0;
  std::size_t star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

// Name-pattern prunability policy. A name qualifies when it matches at least
// one include pattern and no exclude pattern; exclusion wins.
struct PrunablePolicy {
  std::vector<std::string> include_patterns{"*"};
  std::vector<std::string> exclude_patterns{};

  bool matches(std::string_view name) const {
    const bool included = std::any_of(include_patterns.begin(), include_patterns.end(),
                                      [&](const std::string& p) { return glob_match(p, name); });
    if (!included) return false;
    return std::none_of(exclude_patterns.begin(), exclude_patterns.end(),
                        [&](const std::string& p) { return glob_match(p, name); });
  }
};

enum class LayerKind { Conv, Other };

inline std::string to_string(LayerKind kind) { return kind == LayerKind::Conv ? "conv" : "other"; }

inline LayerKind layer_kind_from_string(const std::string& text) {
  if (text == "conv") return LayerKind::Conv;
  if (text == "other") return LayerKind::Other;
  raise(errc::invalid_argument, "unknown layer kind \"" + text + "\" (expected \"conv\" or \"other\")");
}

struct LayerSpec {
  std::string name;
  std::vector<std::size_t> shape;
  LayerKind kind = LayerKind::Other;
  bool prunable = false;
  // Name of the conv layer consuming this layer's output channels; enables
  // dependent-channel accounting in removed_params_for.
  std::optional<std::string> downstream;

  std::size_t params() const { return shape_elements(shape); }
  std::size_t filter_count() const { return shape.empty() ? 0 : shape[0]; }
};

struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;

  const LayerSpec* find(std::string_view layer_name) const {
    for (const auto& layer : layers)
      if (layer.name == layer_name) return &layer;
    return nullptr;
  }

  void validate() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& layer = layers[i];
      if (layer.name.empty()) raise(errc::invalid_argument, "layer names must be nonempty");
      if (layer.shape.empty())
        raise(errc::invalid_argument, "layer \"" + layer.name + "\" has an empty shape");
      for (std::size_t dim : layer.shape)
        if (dim == 0)
          raise(errc::invalid_argument, "layer \"" + layer.name + "\" has a zero dimension");
      if (layer.kind == LayerKind::Conv && layer.shape.size() != 4)
        raise(errc::invalid_argument, "conv layer \"" + layer.name + "\" must be 4-D");
      for (std::size_t j = i + 1; j < layers.size(); ++j)
        if (layers[j].name == layer.name)
          raise(errc::invalid_argument, "duplicate layer name \"" + layer.name + "\"");
    }
  }
};

inline std::size_t count_params(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& layer : spec.layers) total += layer.params();
  return total;
}

inline double real_sparsity(std::size_t original_params, std::size_t remaining_params) {
  if (original_params == 0)
    raise(errc::invalid_argument, "original parameter count must be positive");
  if (remaining_params > original_params)
    raise(errc::invalid_argument, "remaining parameters exceed the original count");
  return static_cast<double>(original_params - remaining_params) /
         static_cast<double>(original_params);
}

struct DownstreamInfo {
  std::size_t params_per_input_channel = 0;
};

inline DownstreamInfo downstream_info_for(const LayerSpec& consumer) {
  if (consumer.kind != LayerKind::Conv)
    raise(errc::invalid_argument, "downstream layer \"" + consumer.name + "\" is not a conv layer");
  return DownstreamInfo{consumer.shape[0] * consumer.shape[2] * consumer.shape[3]};
}

// Parameters removed by pruning `pruned_count` whole filters. The default
// rule counts only the layer's own filter parameters; downstream info adds
// the consuming layer's weights over the removed channels.
inline std::size_t removed_params_for(const LayerSpec& layer, std::size_t pruned_count,
                                      std::optional<DownstreamInfo> downstream = std::nullopt) {
  if (layer.kind != LayerKind::Conv)
    raise(errc::invalid_argument, "layer \"" + layer.name + "\" is not a conv layer");
  if (pruned_count > layer.filter_count())
    raise(errc::invalid_argument, "pruned count " + std::to_string(pruned_count) +
                                      " exceeds filter count " +
                                      std::to_string(layer.filter_count()) + " in layer \"" +
                                      layer.name + "\"");
  std::size_t removed = pruned_count * layer.shape[1] * layer.shape[2] * layer.shape[3];
  if (downstream) removed += pruned_count * downstream->params_per_input_channel;
  return removed;
}

// A layer is prunable iff it is Conv and the policy admits its name.
// Idempotent.
inline ModelSpec apply_policy(ModelSpec spec, const PrunablePolicy& policy) {
  for (auto& layer : spec.layers)
    layer.prunable = layer.kind == LayerKind::Conv && policy.matches(layer.name);
  return spec;
}

struct PruneReportRow {
  std::string name;
  std::size_t n = 0;
  std::size_t pruned_count = 0;
  std::size_t layer_params_removed = 0;
};

struct PruneReport {
  std::string model;
  Criterion criterion = Criterion::Fpgm;
  double theta = 0.0;
  std::size_t original_params = 0;
  std::size_t remaining_params = 0;
  double real_sparsity = 0.0;
  std::vector<PruneReportRow> per_layer;
};

inline PruneReport build_report(const ModelSpec& spec_in,
                                const std::map<std::string, Selection>& selections,
                                Criterion criterion, double theta, const PrunablePolicy& policy) {
  spec_in.validate();
  const ModelSpec spec = apply_policy(spec_in, policy);

  for (const auto& [name, selection] : selections) {
    const LayerSpec* layer = spec.find(name);
    if (layer == nullptr) raise(errc::unknown_layer, "selection for unknown layer \"" + name + "\"");
    if (!layer->prunable)
      raise(errc::invalid_argument, "selection for non-prunable layer \"" + name + "\"");
    if (selection.pruned_indices.size() + selection.kept_indices.size() != layer->filter_count())
      raise(errc::shape_mismatch, "selection for layer \"" + name + "\" covers " +
                                      std::to_string(selection.pruned_indices.size() +
                                                     selection.kept_indices.size()) +
                                      " filters, layer has " +
                                      std::to_string(layer->filter_count()));
  }

  PruneReport report;
  report.model = spec.name;
  report.criterion = criterion;
  report.theta = theta;
  report.original_params = count_params(spec);

  std::size_t removed_total = 0;
  for (const auto& layer : spec.layers) {
    if (!layer.prunable) continue;
    const auto found = selections.find(layer.name);
    if (found == selections.end())
      raise(errc::invalid_argument, "missing selection for prunable layer \"" + layer.name + "\"");
    std::optional<DownstreamInfo> downstream;
    if (layer.downstream) {
      const LayerSpec* consumer = spec.find(*layer.downstream);
      if (consumer == nullptr)
        raise(errc::unknown_layer, "downstream layer \"" + *layer.downstream + "\" of \"" +
                                       layer.name + "\" is not in the model");
      downstream = downstream_info_for(*consumer);
    }
    const std::size_t removed =
        removed_params_for(layer, found->second.pruned_indices.size(), downstream);
    removed_total += removed;
    report.per_layer.push_back(
        {layer.name, layer.filter_count(), found->second.pruned_indices.size(), removed});
  }

  report.remaining_params = report.original_params - removed_total;
  report.real_sparsity = real_sparsity(report.original_params, report.remaining_params);
  return report;
}

// ---- JSON ----

inline nlohmann::json to_json(const LayerSpec& layer) {
  nlohmann::json j{{"name", layer.name}, {"shape", layer.shape}, {"kind", to_string(layer.kind)}};
  if (layer.downstream) j["downstream"] = *layer.downstream;
  return j;
}

inline nlohmann::json to_json(const ModelSpec& spec) {
  auto layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) layers.push_back(to_json(layer));
  return {{"name", spec.name}, {"layers", std::move(layers)}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  try {
    spec.name = j.at("name").get<std::string>();
    for (const auto& entry : j.at("layers")) {
      LayerSpec layer;
      layer.name = entry.at("name").get<std::string>();
      layer.shape = entry.at("shape").get<std::vector<std::size_t>>();
      layer.kind = layer_kind_from_string(entry.at("kind").get<std::string>());
      if (entry.contains("downstream")) layer.downstream = entry["downstream"].get<std::string>();
      spec.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(errc::invalid_header, std::string("malformed model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline ModelSpec load_model_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_error, "cannot open \"" + path.string() + "\" for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::invalid_header, "unparseable model spec \"" + path.string() + "\": " + e.what());
  }
  return model_spec_from_json(j);
}

inline void save_model_spec(const ModelSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) raise(errc::io_error, "cannot open \"" + path.string() + "\" for writing");
  out << to_json(spec).dump(2) << '\n';
}

inline nlohmann::json to_json(const PruneReport& report) {
  auto rows = nlohmann::json::array();
  for (const auto& row : report.per_layer)
    rows.push_back({{"name", row.name},
                    {"n", row.n},
                    {"pruned_count", row.pruned_count},
                    {"layer_params_removed", row.layer_params_removed}});
  return {{"model", report.model},
          {"criterion", to_string(report.criterion)},
          {"theta", report.theta},
          {"original_params", report.original_params},
          {"remaining_params", report.remaining_params},
          {"real_sparsity", report.real_sparsity},
          {"per_layer", std::move(rows)}};
}

inline PruneReport report_from_json(const nlohmann::json& j) {
  PruneReport report;
  try {
    report.model = j.at("model").get<std::string>();
    report.criterion = criterion_from_string(j.at("criterion").get<std::string>());
    report.theta = j.at("theta").get<double>();
    report.original_params = j.at("original_params").get<std::size_t>();
    report.remaining_params = j.at("remaining_params").get<std::size_t>();
    report.real_sparsity = j.at("real_sparsity").get<double>();
    for (const auto& entry : j.at("per_layer"))
      report.per_layer.push_back({entry.at("name").get<std::string>(),
                                  entry.at("n").get<std::size_t>(),
                                  entry.at("pruned_count").get<std::size_t>(),
                                  entry.at("layer_params_removed").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    raise(errc::invalid_header, std::string("malformed prune report: ") + e.what());
  }
  return report;
}

// ---- text table ----

inline std::string format_thousands(std::size_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  out.reserve(digits.size() + digits.size() / 3);
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

// 0.079334 -> "7.93%"
inline std::string format_percent(double fraction) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.2f%%", fraction * 100.0);
  return buffer;
}

inline std::string method_label(Criterion criterion, double theta) {
  char buffer[48];
  std::snprintf(buffer, sizeof(buffer), "%s %g%%", criterion == Criterion::Fpgm ? "FPGM" : "L1",
                theta * 100.0);
  return buffer;
}

// Fixed-width table with one row per report: Method | per-layer pruned
// counts | # of Parameters | Real Sparsity.
inline std::string render_table(const PruneReport& report) {
  std::string pruned_column;
  for (const auto& row : report.per_layer) {
    if (!pruned_column.empty()) pruned_column += "; ";
    pruned_column +=
        row.name + ":" + std::to_string(row.pruned_count) + "/" + std::to_string(row.n);
  }
  if (pruned_column.empty()) pruned_column = "-";

  const std::vector<std::string> headers{"Method", "Pruned Filters", "# of Parameters",
                                         "Real Sparsity"};
  const std::vector<std::string> cells{method_label(report.criterion, report.theta), pruned_column,
                                       format_thousands(report.remaining_params),
                                       format_percent(report.real_sparsity)};
  std::vector<std::size_t> widths(headers.size());
  for (std::size_t i = 0; i < headers.size(); ++i)
    widths[i] = std::max(headers[i].size(), cells[i].size());

  auto emit_row = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      line += row[i];
      if (i + 1 < row.size()) line += std::string(widths[i] - row[i].size() + 2, ' ');
    }
    line += '\n';
    return line;
  };

  std::string rule;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    rule += std::string(widths[i], '-');
    if (i + 1 < widths.size()) rule += "  ";
  }
  return emit_row(headers) + rule + "\n" + emit_row(cells);
}

}  // namespace prunekit
