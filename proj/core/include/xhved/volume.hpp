#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "xhved/errors.hpp"
#include "xhved/modality.hpp"
#include "xhved/tensor.hpp"

namespace xhved {

enum class ChannelRole { flair = 0, t1 = 1, t1c = 2, t2 = 3, wt, tc, et, generic };

std::string_view role_name(ChannelRole r);  // FLAIR, T1, T1c, T2, WT, TC, ET, generic
ChannelRole parse_role(std::string_view text);
ChannelRole modality_role(Modality m);
bool is_label_role(ChannelRole r);

struct Spacing {
  double d = 1.0, h = 1.0, w = 1.0;  // mm
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Image/label grid [B,C,D,H,W] with millimetre spacing and a role per
/// channel. Label channels hold only 0 and 1.
struct Volume {
  Tensor<float> data;
  Spacing spacing;
  std::vector<ChannelRole> roles;

  void validate() const;
  std::optional<std::size_t> channel_of(ChannelRole role) const;
};

/// Z-scores each available modality channel over its nonzero voxels and
/// zeroes the channels missing from `subset`. A zero-variance channel comes
/// back as all zeros. Label and generic channels are copied unchanged.
Volume normalize_intensities(const Volume& volume, ModalitySubset subset);

}  // namespace xhved
