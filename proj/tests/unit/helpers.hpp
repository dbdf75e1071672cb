#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tdyn/corpus.hpp"

namespace testutil {

/// Session whose speakers follow `pattern` ("TCTC..."), text "<tag><index>".
inline tdyn::Session make_session(std::string_view pattern, std::string id = "s1", std::string client = "c1",
                                  int order = 1) {
  tdyn::Session s{id, client, order, {}};
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const auto sp = pattern[i] == 'C' ? tdyn::Speaker::Client : tdyn::Speaker::Therapist;
    s.utterances.push_back({id, i, sp, std::string(1, pattern[i]) + std::to_string(i)});
  }
  return s;
}

inline std::string alternating(std::size_t n, char first = 'T') {
  std::string p;
  for (std::size_t i = 0; i < n; ++i) p += (i % 2 == 0) ? first : (first == 'T' ? 'C' : 'T');
  return p;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
