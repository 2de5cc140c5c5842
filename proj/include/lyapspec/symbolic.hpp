#pragma once

// Combinatorics of the one-sided full shift on three symbols.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lyap {

/// One letter of the alphabet {0,1,2}.
class Symbol {
public:
  constexpr Symbol() = default;
  explicit Symbol(int value);
  constexpr int value() const noexcept { return value_; }
  friend constexpr bool operator==(Symbol, Symbol) = default;
  friend constexpr auto operator<=>(Symbol, Symbol) = default;

private:
  std::uint8_t value_ = 0;
};

using Word = std::vector<Symbol>;

/// Parses an ASCII digit string such as "112". Throws InvalidArgument on any
/// character outside '0'..'2'.
Word parse_word(std::string_view digits);
std::string to_string(std::span<const Symbol> word);

/// Word of `count` copies of `s`.
Word repeat(Symbol s, std::size_t count);

/// Periodic point generated by a finite word.
class PeriodicItinerary {
public:
  explicit PeriodicItinerary(Word generator);
  const Word& generator() const noexcept { return generator_; }
  std::size_t period() const noexcept { return generator_.size(); }
  bool primitive() const noexcept { return primitive_; }
  /// Symbol at position i of the forward periodic continuation.
  Symbol at(std::size_t i) const noexcept { return generator_[i % generator_.size()]; }
  /// First `length` symbols of the i-th shift.
  Word window(std::size_t shift, std::size_t length) const;

private:
  Word generator_;
  bool primitive_ = true;
};

bool is_primitive(std::span<const Symbol> word);

/// Classes of forward itineraries, keyed by the index of the first symbol 2.
enum class PrefixTag { X0Alpha, U, V, XInfinity };

struct PrefixClass {
  PrefixTag tag = PrefixTag::XInfinity;
  int k = 0; // level, >= 1 for U and V, 0 otherwise

  static PrefixClass x0() { return {PrefixTag::X0Alpha, 0}; }
  static PrefixClass u(int k) { return {PrefixTag::U, k}; }
  static PrefixClass v(int k) { return {PrefixTag::V, k}; }
  static PrefixClass infinity() { return {PrefixTag::XInfinity, 0}; }

  friend bool operator==(const PrefixClass&, const PrefixClass&) = default;
  friend auto operator<=>(const PrefixClass&, const PrefixClass&) = default;
};

std::string to_string(const PrefixClass& c);

/// Classifies a finite window. A window containing no 2 is XInfinity even if
/// the full sequence has a 2 further on.
PrefixClass classify_prefix(std::span<const Symbol> window, int alpha);

/// Exact classification of every cyclic shift of a periodic itinerary.
std::vector<PrefixClass> classify_periodic(const PeriodicItinerary& orbit, int alpha);

/// theta^(first disagreement index) over the common length; 0 when equal.
double word_distance(std::span<const Symbol> a, std::span<const Symbol> b, double theta);

/// Primitive necklaces (Lyndon words) of length <= n_max, ordered by length
/// and then lexicographically.
std::vector<PeriodicItinerary> enumerate_periodic(int n_max);

/// de Bruijn graph on words of length N over {0,1,2}. Vertices are indexed by
/// their base-3 value (first symbol most significant), which is the
/// lexicographic order.
class DeBruijnGraph {
public:
  static constexpr int kDefaultMaxDepth = 10;

  explicit DeBruijnGraph(int depth, int max_depth = kDefaultMaxDepth);

  int depth() const noexcept { return depth_; }
  std::size_t vertex_count() const noexcept { return vertex_count_; }
  std::size_t edge_count() const noexcept { return 3 * vertex_count_; }

  /// Target of the edge that drops the first symbol and appends `s`.
  std::size_t successor(std::size_t v, int s) const noexcept {
    return (v % stride_) * 3 + static_cast<std::size_t>(s);
  }
  /// Source of the edge obtained by prepending `s` and dropping the last symbol.
  std::size_t predecessor(std::size_t v, int s) const noexcept {
    return static_cast<std::size_t>(s) * stride_ + v / 3;
  }
  Word word(std::size_t v) const;
  std::size_t index(std::span<const Symbol> w) const;

private:
  int depth_;
  std::size_t vertex_count_;
  std::size_t stride_; // 3^(N-1)
};

DeBruijnGraph build_debruijn(int depth, int max_depth = DeBruijnGraph::kDefaultMaxDepth);

} // namespace lyap
