#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace xhved {

enum class Modality : std::uint8_t { flair = 0, t1 = 1, t1c = 2, t2 = 3 };
inline constexpr std::size_t kNumModalities = 4;
inline constexpr std::array<Modality, kNumModalities> kAllModalities{
    Modality::flair, Modality::t1, Modality::t1c, Modality::t2};

std::string_view modality_name(Modality m);   // "fl", "t1", "t1c", "t2"

/// Availability mask over (FLAIR, T1, T1c, T2). Written as a 4-character
/// bit string in that order, e.g. "1011" = FLAIR, T1c and T2 present.
class ModalitySubset {
 public:
  constexpr ModalitySubset() = default;

  /// Accepts a 4-bit mask ("1011") or comma-separated names ("fl,t1c,t2").
  /// Throws ContractViolation on malformed text or an empty subset.
  static ModalitySubset parse(std::string_view text);
  /// Numeric code with FLAIR as the most significant bit (1..15).
  static ModalitySubset from_code(unsigned code);
  static constexpr ModalitySubset full() { return ModalitySubset(0b1111); }
  /// The 15 non-empty subsets in ascending code order (0001 ... 1111).
  static std::vector<ModalitySubset> all_nonempty();

  bool has(Modality m) const { return (bits_ >> (3 - static_cast<unsigned>(m))) & 1U; }
  bool empty() const { return bits_ == 0; }
  std::size_t count() const;
  unsigned code() const { return bits_; }
  std::vector<Modality> modalities() const;

  std::string mask_string() const;
  std::string names() const;

  ModalitySubset with(Modality m) const {
    return ModalitySubset(bits_ | (1U << (3 - static_cast<unsigned>(m))));
  }

  friend bool operator==(ModalitySubset, ModalitySubset) = default;

 private:
  constexpr explicit ModalitySubset(unsigned bits) : bits_(bits) {}
  unsigned bits_ = 0;
};

}  // namespace xhved
