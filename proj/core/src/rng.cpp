#include "jamlab/rng.hpp"

namespace jamlab {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stable_hash(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t w : words) h = mix64(h ^ mix64(w));
  return h;
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t class_id,
                          std::uint64_t jnr_index, std::uint64_t realization_index) {
  return stable_hash({master_seed, class_id, jnr_index, realization_index});
}

double uniform(RandomStream& rng, double lo, double hi) {
  // std::uniform_real_distribution is implementation-defined; this is not.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

}  // namespace jamlab
