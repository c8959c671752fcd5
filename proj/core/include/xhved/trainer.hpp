#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xhved/checkpoint.hpp"
#include "xhved/dataset.hpp"
#include "xhved/losses.hpp"

namespace xhved {

enum class SubsetStrategy { uniform15, full_only };
enum class Phase { pretrain, joint };

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view text);
std::string_view strategy_name(SubsetStrategy s);
SubsetStrategy parse_strategy(std::string_view text);

struct TrainConfig {
  std::size_t batch_size = 2;
  double learning_rate = 1e-4;
  double lambda_rec = 0.1;
  double lambda_kl = 0.01;
  std::size_t pretrain_steps = 0;
  std::size_t train_steps = 100;
  std::uint64_t seed = 0;
  SubsetStrategy subset_strategy = SubsetStrategy::uniform15;
  bool save_attention = true;
  bool vila = true;
  bool sfeca = true;

  void validate() const;
  /// Model settings implied by this config for volumes of the given extent.
  ModelConfig model_config(std::array<std::size_t, 3> extent) const;
};

/// Uniform over the 15 non-empty subsets, or always 1111.
ModalitySubset sample_subset(Rng& rng, SubsetStrategy strategy);

struct StepMetrics {
  std::uint64_t step = 0;
  Phase phase = Phase::joint;
  double loss = 0, dice_loss = 0, rec_loss = 0, kl = 0, grad_norm = 0;
  ModalitySubset subset;
};

inline constexpr const char* kTrainLogHeader = "step,phase,loss,dice_loss,rec_loss,kl,grad_norm";
std::string format_log_row(const StepMetrics& m);

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<Case> cases);
  /// Resumes model, optimizer moments, step counter and RNG stream.
  Trainer(TrainConfig config, std::vector<Case> cases, const Checkpoint& ckpt);

  StepMetrics step(Phase phase);
  /// Runs `steps` steps, appending one CSV row per step to `log`.
  std::vector<StepMetrics> run(Phase phase, std::size_t steps, std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  XhvedModel<float>& model() { return model_; }
  const XhvedModel<float>& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t steps_done() const { return step_; }

 private:
  TrainConfig config_;
  std::vector<Case> cases_;
  XhvedModel<float> model_;
  Adam<float> adam_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

}  // namespace xhved
