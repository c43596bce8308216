#include "genbench/bitcore.hpp"

#include <bit>

#include "genbench/errors.hpp"
#include "genbench/tasks.hpp"

namespace genbench {

Bitstring::Bitstring(int width, std::uint32_t bits) : width_(width), bits_(bits) {
  if (width < 1 || width > kMaxWidth) {
    throw ConfigError("bitstring width " + std::to_string(width) +
                      " outside [1, 30]");
  }
  if (width < 32 && (bits >> width) != 0) {
    throw ConfigError("bitstring has bits set above width " + std::to_string(width));
  }
}

Bitstring Bitstring::from_text(std::string_view text) {
  const int width = static_cast<int>(text.size());
  if (width < 1 || width > kMaxWidth) {
    throw ConfigError("bitstring text of length " + std::to_string(width) +
                      " outside [1, 30]");
  }
  std::uint32_t bits = 0;
  for (char c : text) {
    if (c != '0' && c != '1') {
      throw ConfigError("invalid bitstring character '" + std::string(1, c) + "'");
    }
    bits = (bits << 1) | static_cast<std::uint32_t>(c == '1');
  }
  return Bitstring(width, bits);
}

std::string Bitstring::to_text() const {
  std::string out(static_cast<std::size_t>(width_), '0');
  for (int i = 0; i < width_; ++i) {
    if (bit(i)) out[static_cast<std::size_t>(width_ - 1 - i)] = '1';
  }
  return out;
}

int hamming_weight(const Bitstring& x) { return std::popcount(x.bits()); }

SampleMultiset::SampleMultiset(int width) : width_(width) {
  if (width < 1 || width > kMaxWidth) {
    throw ConfigError("multiset width " + std::to_string(width) + " outside [1, 30]");
  }
}

void SampleMultiset::add(const Bitstring& x, std::uint64_t count) {
  if (x.width() != width_) {
    throw WidthMismatchError("sample of width " + std::to_string(x.width()) +
                             " added to multiset of width " + std::to_string(width_));
  }
  if (count == 0) return;
  counts_[x.bits()] += count;
  total_ += count;
}

void SampleMultiset::merge(const SampleMultiset& other) {
  if (other.width_ != width_) {
    throw WidthMismatchError("cannot merge multisets of widths " +
                             std::to_string(width_) + " and " +
                             std::to_string(other.width_));
  }
  for (const auto& [bits, c] : other.counts_) counts_[bits] += c;
  total_ += other.total_;
}

std::uint64_t SampleMultiset::count(std::uint32_t bits) const {
  auto it = counts_.find(bits);
  return it == counts_.end() ? 0 : it->second;
}

SampleMultiset multiset_from_samples(std::span<const Bitstring> samples,
                                     int width_if_empty) {
  SampleMultiset out(samples.empty() ? width_if_empty : samples.front().width());
  for (const auto& s : samples) out.add(s);
  return out;
}

QueryPartition partition_queries(const SampleMultiset& queries,
                                 const SampleMultiset& train,
                                 const SolutionSpace& space) {
  if (queries.width() != train.width() || queries.width() != space.width()) {
    throw WidthMismatchError("queries, training set and space widths disagree");
  }
  for (const auto& [bits, c] : train.counts()) {
    if (!space.contains(bits)) {
      throw InvalidTrainingSetError("training sample " +
                                    Bitstring(train.width(), bits).to_text() +
                                    " is not valid in the solution space");
    }
  }
  QueryPartition out{SampleMultiset(queries.width()), SampleMultiset(queries.width())};
  for (const auto& [bits, c] : queries.counts()) {
    if (train.contains(bits)) continue;
    const Bitstring x(queries.width(), bits);
    out.g_new.add(x, c);
    if (space.contains(bits)) out.g_sol.add(x, c);
  }
  return out;
}

}  // namespace genbench
