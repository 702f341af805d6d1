#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "taxogloss/corpus.hpp"

namespace taxogloss {

/// Synthetic Uspanteko-like IGT glossed with leaves of the bundled taxonomy.
///
/// Verbal words follow TAM-ABS-ERG-Root-Voice-Status; nominal words draw from
/// the Subs branch; the rest are one-morpheme particles. Surface forms come
/// from a fixed lexicon shared by every seed (so corpora generated with
/// different seeds share a vocabulary); absolutive and ergative markers of the
/// same person/number share a form. Sentence i depends only on (seed, i).
std::vector<IgtSentence> generate_synthetic(std::uint64_t seed, std::size_t count);

}  // namespace taxogloss
