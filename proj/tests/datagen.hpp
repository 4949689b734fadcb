#pragma once

// Deterministic corpus generators for the desk-scale runs: a pseudo-English
// character stream for language modeling and a lexicon-driven CoNLL dataset
// for tagging. Both are fully determined by the seed.

#include <cstdint>
#include <string>
#include <vector>

#include "ran/rng.hpp"

namespace datagen {

// Builds roughly target_bytes of sentence-shaped text over a small word
// lexicon. The character distribution is rich enough that a character model
// with context beats any unigram fit.
inline std::string make_text_corpus(std::size_t target_bytes, std::uint64_t seed) {
  ran::Rng rng(seed);
  const std::vector<std::string> subjects = {"the king",    "a merchant", "the river",  "an old monk",
                                             "the garden",  "a traveler", "the city",   "the captain",
                                             "a young fox", "the winter", "the library", "a quiet storm"};
  const std::vector<std::string> verbs = {"watched", "crossed", "remembered", "followed", "carried",
                                          "forgot",  "guarded", "painted",    "measured", "opened"};
  const std::vector<std::string> objects = {"the narrow bridge", "a wooden door",   "the silver coin",
                                            "an empty harbor",   "the first snow",  "a faded map",
                                            "the long road",     "a burning lamp",  "the hidden valley",
                                            "an ancient song",   "the broken clock", "a distant bell"};
  const std::vector<std::string> tails = {"at dawn",        "in silence",     "before the rain", "after many years",
                                          "without warning", "under the moon", "once more",       "against the wind"};

  std::string out;
  out.reserve(target_bytes + 128);
  int since_break = 0;
  while (out.size() < target_bytes) {
    out += subjects[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(subjects.size())))];
    out += ' ';
    out += verbs[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(verbs.size())))];
    out += ' ';
    out += objects[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(objects.size())))];
    if (rng.uniform() < 0.4) {
      out += ' ';
      out += tails[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(tails.size())))];
    }
    out += ". ";
    if (++since_break >= 8) {
      out.back() = '\n';
      since_break = 0;
    }
  }
  out.resize(target_bytes);
  return out;
}

struct ConllLexicon {
  std::vector<std::string> fillers = {"said", "went", "to",   "saw",  "then", "met",   "near", "again",
                                      "left", "with", "from", "told", "was",  "later", "home", "today"};
  std::vector<std::string> people = {"adra",  "belen", "ciro",  "dara", "edrin", "fahim",
                                     "galen", "hasna", "ilya",  "joren", "kiva",  "lumen"};
  std::vector<std::string> surnames = {"moss", "hale", "vance", "odell", "pryce", "stern"};
  std::vector<std::string> places = {"arbor", "velka", "torun", "quill", "sable", "ostia", "rhoen", "mirel"};
  std::vector<std::string> org_heads = {"acme", "globex", "initech", "umbra", "vortex", "zenith"};
  std::vector<std::string> org_tails = {"corp", "labs", "group"};
};

// Fillers with a few entity spans; a blank line closes a record after every
// per_doc sentences, so per_doc > 1 yields records spanning several windows.
// Every lexicon token belongs to exactly one role (given names open person
// spans, surnames continue them), so the tag of a token is a deterministic
// function of the token itself and perfect F1 is reachable in principle.
inline std::string make_conll_sentences(int sentences, std::uint64_t seed, int per_doc = 1) {
  ConllLexicon lex;
  ran::Rng rng(seed);
  std::string out;
  for (int s = 0; s < sentences; ++s) {
    const int len = 8 + rng.uniform_int(14);
    int t = 0;
    while (t < len) {
      const double r = rng.uniform();
      if (r < 0.14) {
        out += lex.people[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.people.size())))] +
               " B-PER\n";
        ++t;
        if (rng.uniform() < 0.35 && t < len) {
          out += lex.surnames[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.surnames.size())))] +
                 " I-PER\n";
          ++t;
        }
      } else if (r < 0.24) {
        out += lex.places[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.places.size())))] +
               " B-LOC\n";
        ++t;
      } else if (r < 0.32) {
        out += lex.org_heads[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.org_heads.size())))] +
               " B-ORG\n";
        ++t;
        if (t < len) {
          out += lex.org_tails[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.org_tails.size())))] +
                 " I-ORG\n";
          ++t;
        }
      } else {
        out += lex.fillers[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lex.fillers.size())))] +
               " O\n";
        ++t;
      }
    }
    if ((s + 1) % per_doc == 0 || s + 1 == sentences) out += "\n";
  }
  return out;
}

}  // namespace datagen
