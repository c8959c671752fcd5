#include "xhved/trainer.hpp"

#include <cstdio>

namespace xhved {

std::string_view phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "joint"; }

Phase parse_phase(std::string_view text) {
  if (text == "pretrain") return Phase::pretrain;
  if (text == "joint") return Phase::joint;
  contract_fail("unknown phase '" + std::string(text) + "'");
}

std::string_view strategy_name(SubsetStrategy s) {
  return s == SubsetStrategy::uniform15 ? "uniform15" : "full_only";
}

SubsetStrategy parse_strategy(std::string_view text) {
  if (text == "uniform15") return SubsetStrategy::uniform15;
  if (text == "full_only") return SubsetStrategy::full_only;
  contract_fail("unknown subset strategy '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "train config: batch_size must be >= 1");
  require(learning_rate > 0, "train config: learning_rate must be > 0");
  require(lambda_rec >= 0 && lambda_kl >= 0, "train config: lambdas must be >= 0");
}

ModelConfig TrainConfig::model_config(std::array<std::size_t, 3> extent) const {
  ModelConfig m;
  m.extent = extent;
  m.save_attention = save_attention;
  m.vila = vila;
  m.sfeca = sfeca;
  m.seed = seed;
  return m;
}

ModalitySubset sample_subset(Rng& rng, SubsetStrategy strategy) {
  if (strategy == SubsetStrategy::full_only) return ModalitySubset::full();
  return ModalitySubset::from_code(static_cast<unsigned>(rng.below(15)) + 1);
}

std::string format_log_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%s,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<unsigned long long>(m.step), std::string(phase_name(m.phase)).c_str(),
                m.loss, m.dice_loss, m.rec_loss, m.kl, m.grad_norm);
  return buf;
}

namespace {

std::vector<Case> checked(std::vector<Case> cases) {
  require(!cases.empty(), "trainer: empty dataset");
  for (const auto& c : cases)
    require(c.extent() == cases.front().extent(), "trainer: cases differ in extent");
  return cases;
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::vector<Case> cases)
    : config_((config.validate(), config)),
      cases_(checked(std::move(cases))),
      model_(config_.model_config(cases_.front().extent())),
      adam_(model_.parameters(), AdamOptions{config_.learning_rate}),
      rng_(derive_seed(config_.seed, "train")) {}

Trainer::Trainer(TrainConfig config, std::vector<Case> cases, const Checkpoint& ckpt)
    : Trainer(std::move(config), std::move(cases)) {
  apply_parameters(ckpt, model_);
  adam_.load_state(ckpt.optimizer_steps, ckpt.optimizer_state);
  rng_.set_state(ckpt.rng_state);
  step_ = ckpt.step;
}

StepMetrics Trainer::step(Phase phase) {
  StepMetrics m;
  m.phase = phase;
  m.step = step_ + 1;
  m.subset = sample_subset(rng_, config_.subset_strategy);
  std::vector<std::size_t> idx(config_.batch_size);
  for (auto& i : idx) i = rng_.below(cases_.size());
  const Tensor<float> labels = batch_labels(cases_, idx);
  const Tensor<float> targets = batch_images(cases_, idx, ModalitySubset::full());
  const Tensor<float> inputs = batch_images(cases_, idx, m.subset);

  for (const auto& p : adam_.params()) {
    Tensor<float> handle = p.tensor;
    handle.set_requires_grad(phase == Phase::joint || !frozen_in_pretrain(p.name));
  }
  adam_.zero_grad();
  try {
    const auto out = model_.forward(inputs, m.subset, LatentMode::sample, &rng_);
    const auto terms = phase == Phase::joint
                           ? total_loss(out.seg, out.recon, out.latents, labels, targets,
                                        config_.lambda_rec, config_.lambda_kl)
                           : total_loss(out.seg, out.recon, out.latents, labels, targets, 1.0,
                                        config_.lambda_kl, 0.0);
    m.loss = terms.total.item();
    m.dice_loss = terms.dice.item();
    m.rec_loss = terms.rec.item();
    m.kl = terms.kl.item();
    terms.total.backward();
    m.grad_norm = adam_.step();
  } catch (const NumericError& e) {
    throw NumericError("train step " + std::to_string(m.step) + " (" +
                       std::string(phase_name(phase)) + ", subset " + m.subset.mask_string() +
                       "): " + e.what());
  }
  adam_.zero_grad();
  ++step_;
  return m;
}

std::vector<StepMetrics> Trainer::run(Phase phase, std::size_t steps, std::ostream* log) {
  std::vector<StepMetrics> out;
  for (std::size_t i = 0; i < steps; ++i) {
    out.push_back(step(phase));
    if (log) *log << format_log_row(out.back()) << '\n';
  }
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model = model_.config();
  c.step = step_;
  for (const auto& p : model_.parameters()) c.parameters.push_back({p.name, p.tensor.detach()});
  c.optimizer_steps = adam_.steps();
  for (const auto& p : adam_.state()) c.optimizer_state.push_back({p.name, p.tensor.detach()});
  c.rng_state = rng_.state();
  return c;
}

}  // namespace xhved
