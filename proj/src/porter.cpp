#include "tagforge/porter.hpp"

#include <array>
#include <functional>
#include <vector>

namespace tagforge {

namespace {

bool is_vowel_letter(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Consonant flags for every position: 'y' is a consonant at the start of a
// word or after a vowel.
std::vector<bool> consonant_flags(std::string_view w) {
  std::vector<bool> flags(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (is_vowel_letter(w[i])) {
      flags[i] = false;
    } else if (w[i] == 'y') {
      flags[i] = (i == 0) ? true : !flags[i - 1];
    } else {
      flags[i] = true;
    }
  }
  return flags;
}

bool is_consonant(std::string_view w, std::size_t i) { return consonant_flags(w.substr(0, i + 1))[i]; }

// Number of VC sequences in [C](VC){m}[V].
int measure(std::string_view stem) {
  const auto flags = consonant_flags(stem);
  int m = 0;
  for (std::size_t i = 1; i < flags.size(); ++i) {
    if (!flags[i - 1] && flags[i]) ++m;
  }
  return m;
}

bool contains_vowel(std::string_view stem) {
  for (bool c : consonant_flags(stem)) {
    if (!c) return true;
  }
  return false;
}

bool ends_double_consonant(std::string_view w) {
  return w.size() >= 2 && w[w.size() - 1] == w[w.size() - 2] && is_consonant(w, w.size() - 1);
}

// *o: stem ends consonant-vowel-consonant, last consonant not w, x or y.
bool ends_cvc(std::string_view w) {
  if (w.size() < 3) return false;
  const auto flags = consonant_flags(w);
  const std::size_t n = w.size();
  const char last = w[n - 1];
  return flags[n - 3] && !flags[n - 2] && flags[n - 1] && last != 'w' && last != 'x' && last != 'y';
}

using Condition = std::function<bool(std::string_view)>;

struct Rule {
  std::string_view suffix;
  std::string_view replacement;
  Condition condition;  // empty means unconditional
};

// The first rule whose suffix matches decides the outcome; a failed
// condition leaves the word unchanged.
std::string apply_rules(const std::string& word, const std::vector<Rule>& rules) {
  for (const auto& rule : rules) {
    if (word.ends_with(rule.suffix)) {
      const std::string_view stem = std::string_view(word).substr(0, word.size() - rule.suffix.size());
      if (!rule.condition || rule.condition(stem)) {
        return std::string(stem) + std::string(rule.replacement);
      }
      return word;
    }
  }
  return word;
}

bool positive_measure(std::string_view s) { return measure(s) > 0; }
bool measure_gt1(std::string_view s) { return measure(s) > 1; }

std::string step1a(const std::string& w) {
  static const std::vector<Rule> rules = {
      {"sses", "ss", {}}, {"ies", "i", {}}, {"ss", "ss", {}}, {"s", "", {}}};
  return apply_rules(w, rules);
}

std::string step1b(const std::string& w) {
  if (w.ends_with("eed")) {
    const std::string_view stem = std::string_view(w).substr(0, w.size() - 3);
    return measure(stem) > 0 ? std::string(stem) + "ee" : w;
  }
  std::string stem;
  bool stripped = false;
  for (std::string_view suffix : {std::string_view("ed"), std::string_view("ing")}) {
    if (w.ends_with(suffix)) {
      stem = w.substr(0, w.size() - suffix.size());
      if (contains_vowel(stem)) {
        stripped = true;
        break;
      }
    }
  }
  if (!stripped) return w;

  if (stem.ends_with("at") || stem.ends_with("bl") || stem.ends_with("iz")) return stem + "e";
  if (ends_double_consonant(stem)) {
    const char last = stem.back();
    if (last != 'l' && last != 's' && last != 'z') stem.pop_back();
    return stem;
  }
  if (measure(stem) == 1 && ends_cvc(stem)) return stem + "e";
  return stem;
}

std::string step1c(const std::string& w) {
  static const std::vector<Rule> rules = {{"y", "i", contains_vowel}};
  return apply_rules(w, rules);
}

std::string step2(const std::string& w) {
  static const std::vector<Rule> rules = {
      {"ational", "ate", positive_measure}, {"tional", "tion", positive_measure},
      {"enci", "ence", positive_measure},   {"anci", "ance", positive_measure},
      {"izer", "ize", positive_measure},    {"abli", "able", positive_measure},
      {"alli", "al", positive_measure},     {"fulli", "ful", positive_measure},
      {"entli", "ent", positive_measure},   {"eli", "e", positive_measure},
      {"ousli", "ous", positive_measure},   {"ization", "ize", positive_measure},
      {"ation", "ate", positive_measure},   {"ator", "ate", positive_measure},
      {"alism", "al", positive_measure},    {"iveness", "ive", positive_measure},
      {"fulness", "ful", positive_measure}, {"ousness", "ous", positive_measure},
      {"aliti", "al", positive_measure},    {"iviti", "ive", positive_measure},
      {"biliti", "ble", positive_measure},
  };
  return apply_rules(w, rules);
}

std::string step3(const std::string& w) {
  static const std::vector<Rule> rules = {
      {"icate", "ic", positive_measure}, {"ative", "", positive_measure},
      {"alize", "al", positive_measure}, {"iciti", "ic", positive_measure},
      {"ical", "ic", positive_measure},  {"ful", "", positive_measure},
      {"ness", "", positive_measure},
  };
  return apply_rules(w, rules);
}

std::string step4(const std::string& w) {
  static const Condition ion_condition = [](std::string_view s) {
    return measure(s) > 1 && !s.empty() && (s.back() == 's' || s.back() == 't');
  };
  static const std::vector<Rule> rules = {
      {"al", "", measure_gt1},   {"ance", "", measure_gt1}, {"ence", "", measure_gt1},
      {"er", "", measure_gt1},   {"ic", "", measure_gt1},   {"able", "", measure_gt1},
      {"ible", "", measure_gt1}, {"ant", "", measure_gt1},  {"ement", "", measure_gt1},
      {"ment", "", measure_gt1}, {"ent", "", measure_gt1},  {"ion", "", ion_condition},
      {"ou", "", measure_gt1},   {"ism", "", measure_gt1},  {"ate", "", measure_gt1},
      {"iti", "", measure_gt1},  {"ous", "", measure_gt1},  {"ive", "", measure_gt1},
      {"ize", "", measure_gt1},
  };
  return apply_rules(w, rules);
}

std::string step5a(const std::string& w) {
  if (!w.ends_with('e')) return w;
  const std::string_view stem = std::string_view(w).substr(0, w.size() - 1);
  const int m = measure(stem);
  if (m > 1 || (m == 1 && !ends_cvc(stem))) return std::string(stem);
  return w;
}

std::string step5b(const std::string& w) {
  if (w.ends_with("ll") && measure(std::string_view(w).substr(0, w.size() - 1)) > 1) {
    return w.substr(0, w.size() - 1);
  }
  return w;
}

}  // namespace

std::string porter_stem(std::string_view word) {
  std::string w(word);
  w = step1a(w);
  w = step1b(w);
  w = step1c(w);
  w = step2(w);
  w = step3(w);
  w = step4(w);
  w = step5a(w);
  w = step5b(w);
  return w;
}

}  // namespace tagforge
