#pragma once

#include <string>

#include "msrnn/model.hpp"

namespace test_util {

// "ABCDE" -> ids {0,1,2,3,4}
inline msrnn::TokenSeq seq(const std::string& letters) {
  msrnn::TokenSeq s;
  for (char ch : letters) s.ids.push_back(ch - 'A');
  return s;
}

inline msrnn::TokenSeq random_seq(msrnn::Rng& rng, std::size_t len, std::size_t alphabet) {
  msrnn::TokenSeq s;
  for (std::size_t k = 0; k < len; ++k) {
    s.ids.push_back(static_cast<std::int32_t>(rng.below(alphabet)));
  }
  return s;
}

}  // namespace test_util
