#include "doctest.h"

#include "xhved/dataset.hpp"
#include "xhved/losses.hpp"
#include "xhved/optimizer.hpp"
#include "xhved/trainer.hpp"

using namespace xhved;

TEST_CASE("loss on a fixed batch decreases over 50 steps for most seeds") {
  const auto vols = generate_phantom_set(2, {16, 16, 16}, 21);
  std::vector<Case> cases;
  for (std::size_t i = 0; i < vols.size(); ++i) cases.push_back(make_case(vols[i], "s" + std::to_string(i)));
  const std::vector<std::size_t> idx{0, 1};
  const auto labels = batch_labels(cases, idx);
  const auto targets = batch_images(cases, idx, ModalitySubset::full());

  const int seeds = 10;
  int decreased = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    TrainConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    XhvedModel<float> model(cfg.model_config({16, 16, 16}));
    Adam<float> adam(model.parameters(), AdamOptions{1e-3});
    Rng pick(derive_seed(cfg.seed, "subset"));
    const auto subset = sample_subset(pick, SubsetStrategy::uniform15);
    const auto inputs = batch_images(cases, idx, subset);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
      for (const auto& p : adam.params()) {
        Tensor<float> h = p.tensor;
        h.set_requires_grad(true);
      }
      adam.zero_grad();
      Rng noise(derive_seed(cfg.seed, "noise"));
      const auto out = model.forward(inputs, subset, LatentMode::sample, &noise);
      const auto terms = total_loss(out.seg, out.recon, out.latents, labels, targets, cfg.lambda_rec, cfg.lambda_kl);
      const double loss = terms.total.item();
      if (step == 0) first = loss;
      last = loss;
      terms.total.backward();
      adam.step();
    }
    MESSAGE("seed " << seed << " subset " << subset.mask_string() << ": " << first << " -> " << last);
    decreased += last <= first;
  }
  CHECK(decreased * 10 >= seeds * 9);
}
