#include "xhved/volume.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>

namespace xhved {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::flair: return "fl";
    case Modality::t1: return "t1";
    case Modality::t1c: return "t1c";
    case Modality::t2: return "t2";
  }
  return "?";
}

ModalitySubset ModalitySubset::from_code(unsigned code) {
  require(code >= 1 && code <= 15, "modality subset code must be in 1..15, got " + std::to_string(code));
  return ModalitySubset(code);
}

ModalitySubset ModalitySubset::parse(std::string_view text) {
  const bool is_mask = text.size() == 4 && std::all_of(text.begin(), text.end(),
                                                       [](char c) { return c == '0' || c == '1'; });
  unsigned bits = 0;
  if (is_mask) {
    for (char c : text) bits = (bits << 1) | static_cast<unsigned>(c == '1');
  } else {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t comma = std::min(text.find(',', pos), text.size());
      std::string token(text.substr(pos, comma - pos));
      std::transform(token.begin(), token.end(), token.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      bool matched = false;
      for (Modality m : kAllModalities) {
        if (token == modality_name(m) || (m == Modality::flair && token == "flair") ||
            (m == Modality::t1c && (token == "t1ce" || token == "t1gd"))) {
          bits |= 1U << (3 - static_cast<unsigned>(m));
          matched = true;
        }
      }
      require(matched, "unknown modality '" + token + "' in subset '" + std::string(text) + "'");
      pos = comma + 1;
    }
  }
  require(bits != 0, "modality subset must be non-empty (got '" + std::string(text) + "')");
  return ModalitySubset(bits);
}

std::vector<ModalitySubset> ModalitySubset::all_nonempty() {
  std::vector<ModalitySubset> out;
  for (unsigned c = 1; c <= 15; ++c) out.push_back(ModalitySubset(c));
  return out;
}

std::size_t ModalitySubset::count() const { return static_cast<std::size_t>(std::popcount(bits_)); }

std::vector<Modality> ModalitySubset::modalities() const {
  std::vector<Modality> out;
  for (Modality m : kAllModalities)
    if (has(m)) out.push_back(m);
  return out;
}

std::string ModalitySubset::mask_string() const {
  std::string s;
  for (Modality m : kAllModalities) s += has(m) ? '1' : '0';
  return s;
}

std::string ModalitySubset::names() const {
  std::string s;
  for (Modality m : modalities()) {
    if (!s.empty()) s += ',';
    s += modality_name(m);
  }
  return s;
}

std::string_view role_name(ChannelRole r) {
  switch (r) {
    case ChannelRole::flair: return "FLAIR";
    case ChannelRole::t1: return "T1";
    case ChannelRole::t1c: return "T1c";
    case ChannelRole::t2: return "T2";
    case ChannelRole::wt: return "WT";
    case ChannelRole::tc: return "TC";
    case ChannelRole::et: return "ET";
    case ChannelRole::generic: return "generic";
  }
  return "generic";
}

ChannelRole parse_role(std::string_view text) {
  for (auto r : {ChannelRole::flair, ChannelRole::t1, ChannelRole::t1c, ChannelRole::t2,
                 ChannelRole::wt, ChannelRole::tc, ChannelRole::et, ChannelRole::generic})
    if (text == role_name(r)) return r;
  throw ParseError("role", "unknown channel role '" + std::string(text) + "'");
}

ChannelRole modality_role(Modality m) { return static_cast<ChannelRole>(static_cast<int>(m)); }

bool is_label_role(ChannelRole r) {
  return r == ChannelRole::wt || r == ChannelRole::tc || r == ChannelRole::et;
}

void Volume::validate() const {
  require(data.defined() && data.rank() == 5, "Volume: data must be [B,C,D,H,W]");
  require(spacing.d > 0 && spacing.h > 0 && spacing.w > 0, "Volume: spacing must be positive");
  require(roles.size() == data.dim(1), "Volume: one role per channel required");
  const std::size_t per_channel = data.dim(2) * data.dim(3) * data.dim(4);
  for (std::size_t b = 0; b < data.dim(0); ++b)
    for (std::size_t c = 0; c < roles.size(); ++c) {
      if (!is_label_role(roles[c])) continue;
      const float* p = data.data().data() + (b * roles.size() + c) * per_channel;
      for (std::size_t i = 0; i < per_channel; ++i)
        require(p[i] == 0.0f || p[i] == 1.0f,
                "Volume: label channel " + std::string(role_name(roles[c])) + " is not binary");
    }
}

std::optional<std::size_t> Volume::channel_of(ChannelRole role) const {
  for (std::size_t c = 0; c < roles.size(); ++c)
    if (roles[c] == role) return c;
  return std::nullopt;
}

Volume normalize_intensities(const Volume& volume, ModalitySubset subset) {
  require(volume.data.defined() && volume.data.rank() == 5, "normalize_intensities: bad volume");
  bool any_modality = false;
  for (Modality m : kAllModalities) any_modality |= volume.channel_of(modality_role(m)).has_value();
  require(any_modality, "normalize_intensities: no modality channels present");
  Volume out{volume.data.detach(), volume.spacing, volume.roles};
  const std::size_t channels = volume.roles.size();
  const std::size_t n = volume.data.dim(2) * volume.data.dim(3) * volume.data.dim(4);
  for (std::size_t b = 0; b < volume.data.dim(0); ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const ChannelRole role = volume.roles[c];
      if (is_label_role(role) || role == ChannelRole::generic) continue;
      float* p = out.data.data().data() + (b * channels + c) * n;
      const Modality m = static_cast<Modality>(static_cast<int>(role));
      if (!subset.has(m)) {
        std::fill_n(p, n, 0.0f);
        continue;
      }
      double sum = 0.0, count = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (p[i] != 0.0f) {
          sum += p[i];
          count += 1.0;
        }
      if (count == 0.0) continue;
      const double mu = sum / count;
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (p[i] != 0.0f) var += (p[i] - mu) * (p[i] - mu);
      var /= count;
      if (!(var > 0.0)) {
        std::fill_n(p, n, 0.0f);
        continue;
      }
      const double inv = 1.0 / std::sqrt(var);
      for (std::size_t i = 0; i < n; ++i)
        if (p[i] != 0.0f) p[i] = static_cast<float>((p[i] - mu) * inv);
    }
  return out;
}

}  // namespace xhved
