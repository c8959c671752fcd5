#pragma once

#include <array>
#include <string>
#include <vector>

#include "xhved/dataset.hpp"
#include "xhved/metrics.hpp"
#include "xhved/model.hpp"

namespace xhved {

struct Prediction {
  Tensor<float> seg;    // [3,D,H,W] probabilities
  Tensor<float> recon;  // [4,D,H,W]
};

/// Anything that maps a case and an availability mask to predictions.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Prediction predict(const Case& c, ModalitySubset subset) = 0;
};

/// Runs the model on the masked case with mean latents.
class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(const XhvedModel<float>& model) : model_(model) {}
  Prediction predict(const Case& c, ModalitySubset subset) override;

 private:
  const XhvedModel<float>& model_;
};

/// Returns the ground truth regardless of the subset.
class OraclePredictor : public Predictor {
 public:
  Prediction predict(const Case& c, ModalitySubset subset) override;
};

/// Predicts empty masks and an all-zero reconstruction.
class ZeroPredictor : public Predictor {
 public:
  Prediction predict(const Case& c, ModalitySubset subset) override;
};

struct GridRow {
  ModalitySubset subset;
  std::array<double, 3> dice{};   // WT, TC, ET
  std::array<double, 3> hd95{};
  std::array<double, 4> psnr{};   // FLAIR, T1, T1c, T2
};

struct SubsetResultGrid {
  std::vector<GridRow> rows;  // 15, ascending mask code
  GridRow average;

  const GridRow& row(ModalitySubset s) const;
  std::string to_csv() const;
};

inline constexpr const char* kGridHeader =
    "fl,t1,t1c,t2,dice_wt,dice_tc,dice_et,hd95_wt,hd95_tc,hd95_et,psnr_fl,psnr_t1,psnr_t1c,psnr_t2";

/// Metrics of one prediction against a case.
GridRow score_case(const Case& c, const Prediction& p, ModalitySubset subset);

/// Every non-empty subset, metrics averaged over the cases, plus the mean row.
SubsetResultGrid subset_eval_grid(Predictor& predictor, const std::vector<Case>& cases);

/// PSNR of the reconstructed absent modalities, averaged within each row and
/// then over the 14 rows that miss at least one modality.
double missing_modality_psnr(const SubsetResultGrid& grid);

/// Masks the absent modalities of a case: [1,4,D,H,W].
Tensor<float> masked_input(const Case& c, ModalitySubset subset);

}  // namespace xhved
