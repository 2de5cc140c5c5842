#include "lyapspec/symbolic.hpp"

#include "lyapspec/errors.hpp"

#include <algorithm>
#include <cmath>

namespace lyap {

Symbol::Symbol(int value) {
  if (value < 0 || value > 2) {
    throw InvalidArgument("symbol out of range: " + std::to_string(value));
  }
  value_ = static_cast<std::uint8_t>(value);
}

Word parse_word(std::string_view digits) {
  Word w;
  w.reserve(digits.size());
  for (char c : digits) {
    if (c < '0' || c > '2') {
      throw InvalidArgument(std::string("invalid symbol character '") + c + "'");
    }
    w.emplace_back(c - '0');
  }
  return w;
}

std::string to_string(std::span<const Symbol> word) {
  std::string s;
  s.reserve(word.size());
  for (Symbol x : word) s.push_back(static_cast<char>('0' + x.value()));
  return s;
}

Word repeat(Symbol s, std::size_t count) { return Word(count, s); }

bool is_primitive(std::span<const Symbol> word) {
  const std::size_t n = word.size();
  for (std::size_t d = 1; d < n; ++d) {
    if (n % d != 0) continue;
    bool periodic = true;
    for (std::size_t i = d; i < n && periodic; ++i) periodic = word[i] == word[i - d];
    if (periodic) return false;
  }
  return n > 0;
}

PeriodicItinerary::PeriodicItinerary(Word generator) : generator_(std::move(generator)) {
  if (generator_.empty()) throw InvalidArgument("periodic itinerary needs a nonempty generator");
  primitive_ = is_primitive(generator_);
}

Word PeriodicItinerary::window(std::size_t shift, std::size_t length) const {
  Word w(length);
  for (std::size_t i = 0; i < length; ++i) w[i] = at(shift + i);
  return w;
}

std::string to_string(const PrefixClass& c) {
  switch (c.tag) {
  case PrefixTag::X0Alpha: return "X0";
  case PrefixTag::U: return "U" + std::to_string(c.k);
  case PrefixTag::V: return "V" + std::to_string(c.k);
  case PrefixTag::XInfinity: return "Xinf";
  }
  return "?";
}

namespace {

// Class from the index of the first 2 and whether every earlier symbol is 1.
PrefixClass class_from_first_two(std::size_t j, bool all_ones_before, int alpha) {
  if (j <= static_cast<std::size_t>(alpha)) return PrefixClass::x0();
  const int k = static_cast<int>(j) - alpha;
  return all_ones_before ? PrefixClass::v(k) : PrefixClass::u(k);
}

} // namespace

PrefixClass classify_prefix(std::span<const Symbol> window, int alpha) {
  if (window.empty()) throw InvalidArgument("classify_prefix: empty window");
  if (alpha < 0) throw InvalidArgument("classify_prefix: alpha must be non-negative");
  bool ones = true;
  for (std::size_t j = 0; j < window.size(); ++j) {
    const int s = window[j].value();
    if (s == 2) return class_from_first_two(j, ones, alpha);
    ones = ones && s == 1;
  }
  return PrefixClass::infinity();
}

std::vector<PrefixClass> classify_periodic(const PeriodicItinerary& orbit, int alpha) {
  const std::size_t n = orbit.period();
  std::vector<PrefixClass> out;
  out.reserve(n);
  // Within one period every shift either meets a 2 or never does.
  for (std::size_t i = 0; i < n; ++i) out.push_back(classify_prefix(orbit.window(i, n), alpha));
  return out;
}

double word_distance(std::span<const Symbol> a, std::span<const Symbol> b, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("word_distance: theta must lie in (0,1)");
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return std::pow(theta, static_cast<double>(i));
  }
  return 0.0;
}

std::vector<PeriodicItinerary> enumerate_periodic(int n_max) {
  if (n_max < 1) throw InvalidArgument("enumerate_periodic: n_max must be >= 1");
  // Duval's generation of Lyndon words in lexicographic order.
  std::vector<std::vector<PeriodicItinerary>> by_length(static_cast<std::size_t>(n_max) + 1);
  std::vector<int> w{-1};
  while (!w.empty()) {
    ++w.back();
    Word word;
    word.reserve(w.size());
    for (int s : w) word.emplace_back(s);
    by_length[w.size()].emplace_back(std::move(word));
    const std::size_t m = w.size();
    while (w.size() < static_cast<std::size_t>(n_max)) w.push_back(w[w.size() - m]);
    while (!w.empty() && w.back() == 2) w.pop_back();
  }
  std::vector<PeriodicItinerary> out;
  for (auto& group : by_length) {
    for (auto& p : group) out.push_back(std::move(p));
  }
  return out;
}

DeBruijnGraph::DeBruijnGraph(int depth, int max_depth) : depth_(depth) {
  if (depth < 1) throw InvalidArgument("de Bruijn depth must be >= 1");
  if (depth > max_depth) {
    throw ResourceLimit("de Bruijn depth " + std::to_string(depth) + " exceeds cap " +
                        std::to_string(max_depth));
  }
  stride_ = 1;
  for (int i = 1; i < depth; ++i) stride_ *= 3;
  vertex_count_ = stride_ * 3;
}

Word DeBruijnGraph::word(std::size_t v) const {
  Word w(static_cast<std::size_t>(depth_));
  for (int i = depth_ - 1; i >= 0; --i) {
    w[static_cast<std::size_t>(i)] = Symbol(static_cast<int>(v % 3));
    v /= 3;
  }
  return w;
}

std::size_t DeBruijnGraph::index(std::span<const Symbol> w) const {
  if (w.size() != static_cast<std::size_t>(depth_)) throw InvalidArgument("word length != graph depth");
  std::size_t v = 0;
  for (Symbol s : w) v = v * 3 + static_cast<std::size_t>(s.value());
  return v;
}

DeBruijnGraph build_debruijn(int depth, int max_depth) { return DeBruijnGraph(depth, max_depth); }

} // namespace lyap
