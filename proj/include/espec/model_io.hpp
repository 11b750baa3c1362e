#pragma once

#include <string>

#include "espec/model.hpp"

namespace espec {

// Model file format: "ESPEC1\n" magic, an 8-byte little-endian header
// length, a JSON header (config + ordered tensor manifest of name/shape),
// then the raw little-endian float32 tensor data concatenated in manifest
// order.
inline constexpr char kModelMagic[] = "ESPEC1\n";

void save_model(const Model& model, const std::string& path);

Model load_model(const std::string& path);

}  // namespace espec
