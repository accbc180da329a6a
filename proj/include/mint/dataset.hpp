#pragma once

#include <string>
#include <vector>

#include "mint/env.hpp"

namespace mint {

// MINTD dataset format: a text header line `MINTD v1 H=<int> D=<int> S=<int>`
// followed by one record per demonstration: T as u32 LE, then two
// length-prefixed blocks of f32 LE values (u32 float count, then values) for
// states and actions, then label u32, layout u32, seed u64.
struct DatasetFile {
  int horizon = 16;
  std::vector<env::Demonstration> demos;
};

std::string serialize_dataset(const std::vector<env::Demonstration>& demos, int horizon);
DatasetFile parse_dataset(const std::string& bytes);

void save_dataset(const std::string& path, const std::vector<env::Demonstration>& demos,
                  int horizon);
DatasetFile load_dataset(const std::string& path);

}  // namespace mint
