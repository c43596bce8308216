#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace genbench {

inline constexpr int kMaxWidth = 30;

/// Fixed-width binary pattern. Bit i holds the value of position i; the text
/// form is most-significant-first, so position N-1 is the leftmost character.
class Bitstring {
 public:
  Bitstring() = default;
  /// Throws ConfigError if width is outside [1, 30] or bits has set bits at
  /// or above position width.
  Bitstring(int width, std::uint32_t bits);

  static Bitstring from_text(std::string_view text);
  std::string to_text() const;

  int width() const { return width_; }
  std::uint32_t bits() const { return bits_; }
  bool bit(int position) const { return (bits_ >> position) & 1u; }

  friend bool operator==(const Bitstring&, const Bitstring&) = default;
  friend auto operator<=>(const Bitstring&, const Bitstring&) = default;

 private:
  int width_ = 1;
  std::uint32_t bits_ = 0;
};

int hamming_weight(const Bitstring& x);

/// Multiset of equal-width bitstrings with exact integer counts. Keys are
/// kept ordered by integer encoding; zero counts are never stored.
class SampleMultiset {
 public:
  using CountMap = std::map<std::uint32_t, std::uint64_t>;

  explicit SampleMultiset(int width);

  void add(const Bitstring& x, std::uint64_t count = 1);
  /// Adds every entry of other (same width required).
  void merge(const SampleMultiset& other);

  std::uint64_t count(std::uint32_t bits) const;
  std::uint64_t count(const Bitstring& x) const { return count(x.bits()); }
  bool contains(std::uint32_t bits) const { return counts_.contains(bits); }

  int width() const { return width_; }
  std::uint64_t total() const { return total_; }
  std::size_t unique_size() const { return counts_.size(); }
  bool empty() const { return total_ == 0; }
  const CountMap& counts() const { return counts_; }

  friend bool operator==(const SampleMultiset&, const SampleMultiset&) = default;

 private:
  int width_;
  std::uint64_t total_ = 0;
  CountMap counts_;
};

/// Counts occurrences. An empty sequence yields an empty multiset of the
/// given fallback width.
SampleMultiset multiset_from_samples(std::span<const Bitstring> samples,
                                     int width_if_empty = 1);

class SolutionSpace;

struct QueryPartition {
  SampleMultiset g_new;  // queries not present in the training set
  SampleMultiset g_sol;  // the subset of g_new that is valid
};

/// Splits queries into the unseen part and the unseen-valid part. Throws
/// WidthMismatchError or InvalidTrainingSetError.
QueryPartition partition_queries(const SampleMultiset& queries,
                                 const SampleMultiset& train,
                                 const SolutionSpace& space);

}  // namespace genbench
