#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prunekit/accounting.hpp"
#include "prunekit/container.hpp"
#include "prunekit/criteria.hpp"

namespace prunekit {

enum class SfpPhase { Soft, HardFinetune, Done };

inline std::string to_string(SfpPhase phase) {
  switch (phase) {
    case SfpPhase::Soft: return "soft";
    case SfpPhase::HardFinetune: return "hard_finetune";
    case SfpPhase::Done: return "done";
  }
  return "done";
}

inline SfpPhase sfp_phase_from_string(const std::string& text) {
  if (text == "soft") return SfpPhase::Soft;
  if (text == "hard_finetune") return SfpPhase::HardFinetune;
  if (text == "done") return SfpPhase::Done;
  raise(errc::invalid_argument, "unknown phase \"" + text + "\"");
}

// Per-layer keep/prune vector; keep[j] == false means filter j is zeroed.
struct PruneMask {
  std::string layer_name;
  std::vector<bool> keep;
  int epoch = 0;  // epoch at whose boundary the mask was derived
  Criterion criterion = Criterion::Fpgm;
  double theta = 0.0;

  std::size_t pruned_count() const {
    std::size_t count = 0;
    for (bool kept : keep)
      if (!kept) ++count;
    return count;
  }
};

struct LrStep {
  int epoch = 0;
  double factor = 1.0;
};

struct FinetuneLr {
  int epoch_offset = 0;
  double lr = 0.0;
};

// Step schedule: lr_initial scaled multiplicatively at each lr_steps epoch
// during the soft phase, then absolute rates per finetune offset.
struct SfpSchedule {
  int soft_epochs = 200;
  int finetune_epochs = 10;
  double lr_initial = 1e-3;
  std::vector<LrStep> lr_steps{{50, 0.1}, {100, 0.1}};
  std::vector<FinetuneLr> finetune_lr{{0, 1e-3}, {5, 1e-4}};

  // 40 soft epochs with steps at 10/20, 10 finetune epochs; the 200-epoch
  // schedule compressed 5x for desk-scale runs.
  static SfpSchedule toy_default() {
    SfpSchedule schedule;
    schedule.soft_epochs = 40;
    schedule.lr_steps = {{10, 0.1}, {20, 0.1}};
    return schedule;
  }

  void validate() const {
    if (soft_epochs <= 0) raise(errc::invalid_argument, "soft_epochs must be positive");
    if (finetune_epochs <= 0) raise(errc::invalid_argument, "finetune_epochs must be positive");
    if (!(lr_initial > 0.0)) raise(errc::invalid_argument, "lr_initial must be positive");
    int prev = 0;
    for (const auto& step : lr_steps) {
      if (step.epoch <= prev || step.epoch >= soft_epochs)
        raise(errc::invalid_argument, "lr step epochs must be strictly increasing within (0, soft_epochs)");
      if (!(step.factor > 0.0)) raise(errc::invalid_argument, "lr step factors must be positive");
      prev = step.epoch;
    }
    if (finetune_lr.empty() || finetune_lr.front().epoch_offset != 0)
      raise(errc::invalid_argument, "finetune_lr must start at offset 0");
    prev = -1;
    for (const auto& entry : finetune_lr) {
      if (entry.epoch_offset <= prev || entry.epoch_offset >= finetune_epochs)
        raise(errc::invalid_argument, "finetune lr offsets must be strictly increasing within [0, finetune_epochs)");
      if (!(entry.lr > 0.0)) raise(errc::invalid_argument, "finetune rates must be positive");
      prev = entry.epoch_offset;
    }
  }

  double soft_lr(int epoch) const {
    double lr = lr_initial;
    for (const auto& step : lr_steps)
      if (epoch >= step.epoch) lr *= step.factor;
    return lr;
  }

  double finetune_lr_at(int offset) const {
    double lr = finetune_lr.front().lr;
    for (const auto& entry : finetune_lr)
      if (offset >= entry.epoch_offset) lr = entry.lr;
    return lr;
  }
};

struct PruneConfig {
  double theta = 0.0;
  Criterion criterion = Criterion::Fpgm;
  PrunablePolicy prunable_layers;
  SfpSchedule schedule;
};

// Instruction to the trainer for the upcoming epoch.
struct LrDirective {
  double lr = 0.0;
  bool freeze_pruned = false;  // zero gradients (and weights) of pruned filters
};

struct SfpState {
  SfpPhase phase = SfpPhase::Soft;
  int epoch = 0;  // epochs completed, i.e. step_epoch calls so far
  std::map<std::string, PruneMask> masks;
  PruneConfig config;
};

// One mask per prunable layer of the container. A layer is prunable when it
// is 4-D and the policy admits its name; selection runs on the weights as
// given, zeros from prior masking included.
inline std::map<std::string, PruneMask> derive_masks(const WeightContainer& weights,
                                                     const PruneConfig& config, int epoch) {
  std::map<std::string, PruneMask> masks;
  for (const auto& [name, tensor] : weights.layers()) {
    if (tensor.shape.size() != 4 || !config.prunable_layers.matches(name)) continue;
    const FilterBank bank = as_filter_bank(tensor, name);
    const Selection selection = select(compute_scores(bank, config.criterion), config.theta);
    PruneMask mask;
    mask.layer_name = name;
    mask.keep.assign(bank.n, true);
    for (std::size_t index : selection.pruned_indices) mask.keep[index] = false;
    mask.epoch = epoch;
    mask.criterion = config.criterion;
    mask.theta = config.theta;
    masks.emplace(name, std::move(mask));
  }
  if (masks.empty()) raise(errc::empty_policy_match, "no layer matches the prunable policy");
  return masks;
}

// Zeroes the pruned filters of every masked layer; all other values pass
// through bit-identically. Idempotent.
inline WeightContainer apply_masks(const WeightContainer& weights,
                                   const std::map<std::string, PruneMask>& masks) {
  WeightContainer out;
  out.metadata = weights.metadata;
  for (const auto& [name, tensor] : weights.layers()) {
    const auto found = masks.find(name);
    if (found == masks.end()) {
      out.add_layer(name, tensor);
      continue;
    }
    const PruneMask& mask = found->second;
    if (tensor.shape.size() != 4)
      raise(errc::shape_mismatch, "mask for layer \"" + name + "\" but the layer is not 4-D");
    if (mask.keep.size() != tensor.shape[0])
      raise(errc::shape_mismatch, "mask for layer \"" + name + "\" covers " +
                                      std::to_string(mask.keep.size()) + " filters, layer has " +
                                      std::to_string(tensor.shape[0]));
    Tensor masked = tensor;
    const std::size_t stride = tensor.shape[1] * tensor.shape[2] * tensor.shape[3];
    for (std::size_t j = 0; j < mask.keep.size(); ++j) {
      if (mask.keep[j]) continue;
      for (std::size_t i = 0; i < stride; ++i) masked.data[j * stride + i] = 0.0f;
    }
    out.add_layer(name, std::move(masked));
  }
  return out;
}

struct SfpStepResult {
  SfpState state;
  WeightContainer weights;
  LrDirective directive;
};

// Advances the state machine by one epoch boundary. In the soft phase the
// masks are re-derived from the current weights and re-applied; once
// soft_epochs boundaries have passed, the final masks freeze and the hard
// fine-tune phase re-applies them defensively each epoch. The returned
// directive carries the learning rate in force for the upcoming epoch.
inline SfpStepResult step_epoch(SfpState state, WeightContainer weights) {
  state.config.schedule.validate();
  const SfpSchedule& schedule = state.config.schedule;
  LrDirective directive;
  switch (state.phase) {
    case SfpPhase::Done:
      raise(errc::invalid_state, "step_epoch called on a finished run");
    case SfpPhase::Soft: {
      state.masks = derive_masks(weights, state.config, state.epoch);
      weights = apply_masks(weights, state.masks);
      state.epoch += 1;
      if (state.epoch >= schedule.soft_epochs) {
        state.phase = SfpPhase::HardFinetune;
        directive = {schedule.finetune_lr_at(0), true};
      } else {
        directive = {schedule.soft_lr(state.epoch), false};
      }
      break;
    }
    case SfpPhase::HardFinetune: {
      weights = apply_masks(weights, state.masks);
      state.epoch += 1;
      const int offset = state.epoch - schedule.soft_epochs;
      if (offset >= schedule.finetune_epochs) state.phase = SfpPhase::Done;
      directive = {schedule.finetune_lr_at(offset), true};
      break;
    }
  }
  return {std::move(state), std::move(weights), directive};
}

inline PruneReport build_report(const ModelSpec& spec,
                                const std::map<std::string, Selection>& selections,
                                const PruneConfig& config) {
  return build_report(spec, selections, config.criterion, config.theta, config.prunable_layers);
}

// ---- checkpointing ----
//
// A checkpoint is the pair <run>.sfp.json / <run>.pktc: the state as
// {"phase", "epoch", "masks": {layer: [bools]}} plus a container snapshot.

inline void save_checkpoint(const SfpState& state, const WeightContainer& weights,
                            const std::filesystem::path& dir, const std::string& run) {
  nlohmann::json masks = nlohmann::json::object();
  for (const auto& [name, mask] : state.masks) masks[name] = mask.keep;
  const nlohmann::json j{{"phase", to_string(state.phase)}, {"epoch", state.epoch},
                         {"masks", std::move(masks)}};
  const auto json_path = dir / (run + ".sfp.json");
  std::ofstream out(json_path);
  if (!out) raise(errc::io_error, "cannot open \"" + json_path.string() + "\" for writing");
  out << j.dump(2) << '\n';
  write_container(weights, dir / (run + ".pktc"));
}

// Mask provenance fields (criterion, theta) are rebuilt from the supplied
// config; the epoch stamp becomes the checkpoint epoch.
inline std::pair<SfpState, WeightContainer> load_checkpoint(const std::filesystem::path& dir,
                                                            const std::string& run,
                                                            PruneConfig config) {
  const auto json_path = dir / (run + ".sfp.json");
  std::ifstream in(json_path);
  if (!in) raise(errc::io_error, "cannot open \"" + json_path.string() + "\" for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::invalid_header, "unparseable checkpoint \"" + json_path.string() + "\": " + e.what());
  }

  SfpState state;
  try {
    state.phase = sfp_phase_from_string(j.at("phase").get<std::string>());
    state.epoch = j.at("epoch").get<int>();
    for (const auto& [name, keep] : j.at("masks").items()) {
      PruneMask mask;
      mask.layer_name = name;
      mask.keep = keep.get<std::vector<bool>>();
      mask.epoch = state.epoch;
      mask.criterion = config.criterion;
      mask.theta = config.theta;
      state.masks.emplace(name, std::move(mask));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(errc::invalid_header, "malformed checkpoint \"" + json_path.string() + "\": " + e.what());
  }
  state.config = std::move(config);
  return {std::move(state), read_container(dir / (run + ".pktc"))};
}

}  // namespace prunekit
