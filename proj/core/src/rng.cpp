#include "taxogloss/rng.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace taxogloss {

std::size_t uniform_index(CounterRng& rng, std::size_t n) {
  boost::random::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

double uniform_real(CounterRng& rng) {
  boost::random::uniform_01<double> dist;
  return dist(rng);
}

double normal(CounterRng& rng, double mean, double stddev) {
  boost::random::normal_distribution<double> dist(mean, stddev);
  return dist(rng);
}

}  // namespace taxogloss
