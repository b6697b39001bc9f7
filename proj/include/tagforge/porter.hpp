#pragma once

#include <string>
#include <string_view>

namespace tagforge {

// Porter suffix-stripping stemmer (1980 rule set) with one addition: the
// step-2 rule (m>0) FULLI -> FUL, so "beautifully" conflates with "beauty".
// Input must be lowercase ASCII letters; other bytes are treated as consonants.
std::string porter_stem(std::string_view word);

}  // namespace tagforge
