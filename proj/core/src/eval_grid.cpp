#include "xhved/eval_grid.hpp"

#include <cstdio>
#include <sstream>

namespace xhved {

Tensor<float> masked_input(const Case& c, ModalitySubset subset) {
  return batch_images({c}, {0}, subset);
}

Prediction ModelPredictor::predict(const Case& c, ModalitySubset subset) {
  NoGradGuard guard;
  const auto out = model_.forward(masked_input(c, subset), subset, LatentMode::mean, nullptr);
  const auto [d, h, w] = c.extent();
  return {ops::reshape(out.seg, Shape{3, d, h, w}), ops::reshape(out.recon, Shape{4, d, h, w})};
}

Prediction OraclePredictor::predict(const Case& c, ModalitySubset) {
  return {c.labels.detach(), c.images.detach()};
}

Prediction ZeroPredictor::predict(const Case& c, ModalitySubset) {
  return {Tensor<float>(c.labels.shape()), Tensor<float>(c.images.shape())};
}

GridRow score_case(const Case& c, const Prediction& p, ModalitySubset subset) {
  const Extent e = c.extent();
  const std::size_t n = e[0] * e[1] * e[2];
  require(p.seg.numel() == 3 * n && p.recon.numel() == 4 * n,
          "score_case: prediction does not match the case grid");
  const RegionMasks pred = enforce_nesting(p.seg.data(), e);
  const RegionMasks truth = enforce_nesting(c.labels.data(), e);
  GridRow row;
  row.subset = subset;
  for (std::size_t r = 0; r < 3; ++r) {
    row.dice[r] = dice_score(pred.regions[r], truth.regions[r]);
    row.hd95[r] = hd95(pred.regions[r], truth.regions[r], c.spacing);
  }
  for (std::size_t m = 0; m < 4; ++m) {
    const auto ref = c.images.data().subspan(m * n, n);
    row.psnr[m] = psnr(p.recon.data().subspan(m * n, n), ref, data_range(ref));
  }
  return row;
}

namespace {

void accumulate(GridRow& acc, const GridRow& r, double weight) {
  for (std::size_t i = 0; i < 3; ++i) {
    acc.dice[i] += weight * r.dice[i];
    acc.hd95[i] += weight * r.hd95[i];
  }
  for (std::size_t i = 0; i < 4; ++i) acc.psnr[i] += weight * r.psnr[i];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

SubsetResultGrid subset_eval_grid(Predictor& predictor, const std::vector<Case>& cases) {
  require(!cases.empty(), "subset_eval_grid: empty dataset");
  SubsetResultGrid grid;
  const double per_case = 1.0 / static_cast<double>(cases.size());
  for (ModalitySubset s : ModalitySubset::all_nonempty()) {
    GridRow row;
    row.subset = s;
    for (const Case& c : cases) accumulate(row, score_case(c, predictor.predict(c, s), s), per_case);
    grid.rows.push_back(row);
  }
  grid.average.subset = ModalitySubset::full();
  for (const auto& r : grid.rows) accumulate(grid.average, r, 1.0 / static_cast<double>(grid.rows.size()));
  return grid;
}

const GridRow& SubsetResultGrid::row(ModalitySubset s) const {
  for (const auto& r : rows)
    if (r.subset == s) return r;
  contract_fail("grid has no row for subset " + s.mask_string());
}

std::string SubsetResultGrid::to_csv() const {
  std::ostringstream os;
  os << kGridHeader << '\n';
  auto metrics = [&](const GridRow& r) {
    for (double v : r.dice) os << ',' << fmt(v);
    for (double v : r.hd95) os << ',' << fmt(v);
    for (double v : r.psnr) os << ',' << fmt(v);
    os << '\n';
  };
  for (const auto& r : rows) {
    const std::string m = r.subset.mask_string();
    os << m[0] << ',' << m[1] << ',' << m[2] << ',' << m[3];
    metrics(r);
  }
  os << "avg,,,";
  metrics(average);
  return os.str();
}

double missing_modality_psnr(const SubsetResultGrid& grid) {
  double total = 0.0;
  std::size_t rows = 0;
  for (const auto& r : grid.rows) {
    double sum = 0.0;
    std::size_t n = 0;
    for (Modality m : kAllModalities) {
      if (r.subset.has(m)) continue;
      sum += r.psnr[static_cast<std::size_t>(m)];
      ++n;
    }
    if (n == 0) continue;
    total += sum / static_cast<double>(n);
    ++rows;
  }
  require(rows > 0, "missing_modality_psnr: grid has no row with a missing modality");
  return total / static_cast<double>(rows);
}

}  // namespace xhved
