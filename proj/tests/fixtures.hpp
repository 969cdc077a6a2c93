#pragma once

#include <filesystem>
#include <string>

#include "csgba/dataset.hpp"
#include "csgba/numeric.hpp"

namespace fixtures {

/// Uniform random transitions with the given shape; every 7th row is terminal.
inline csgba::Dataset random_dataset(std::size_t n, std::size_t sd, std::size_t ad, std::uint64_t seed,
                                     const std::string& env = "point-reach") {
  csgba::Rng rng(seed);
  csgba::DatasetBuilder b(env, sd, ad);
  for (std::size_t i = 0; i < n; ++i) {
    csgba::Transition t;
    t.s.resize(static_cast<Eigen::Index>(sd));
    t.s_next.resize(static_cast<Eigen::Index>(sd));
    t.a.resize(static_cast<Eigen::Index>(ad));
    for (Eigen::Index k = 0; k < t.s.size(); ++k) t.s[k] = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (Eigen::Index k = 0; k < t.s.size(); ++k) t.s_next[k] = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (Eigen::Index k = 0; k < t.a.size(); ++k) t.a[k] = static_cast<float>(rng.uniform(-1.0, 1.0));
    t.r = static_cast<float>(rng.uniform(-1.0, 1.0));
    t.done = i % 7 == 6;
    b.push(t);
  }
  return b.build("random:" + std::to_string(seed));
}

/// Fresh directory under the system temp dir, removed first if present.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("csgba-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace fixtures
