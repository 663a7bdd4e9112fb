#pragma once

#include <map>
#include <string>
#include <vector>

#include "ckd/tensor.hpp"

namespace ckd {

// Checkpoint file: magic "CKPT", version u16 = 1, reserved u16 = 0,
// manifest length u64, manifest JSON (meta strings plus per-tensor name,
// shape and byte offset into the data section), then the flat data section
// of little-endian 64-bit floats in manifest order.
struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> entries;
  std::map<std::string, std::string> meta;

  const Entry& find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const std::map<std::string, std::string>& meta);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into same-named parameters; every parameter must
// be present with a matching shape.
void load_into(const Checkpoint& ckpt, std::vector<Parameter> params);

}  // namespace ckd
