#pragma once

#include "flr/fpca.hpp"
#include "flr/regression.hpp"

#include <string>

namespace flr::io {

/// Identifier written into every model document. Documents carrying any
/// other format or version are rejected.
inline constexpr const char* kModelFormat = "flr-model";
inline constexpr int kModelVersion = 1;

/// JSON text of a fitted model. Reals are written in shortest round-trip
/// form, so reading the text back reproduces every value bit for bit
/// (undefined pointwise R^2 values are stored as null).
std::string model_to_json(const regression::FlrModel& model);
regression::FlrModel model_from_json(const std::string& text);

void save_model(const regression::FlrModel& model, const std::string& path);
regression::FlrModel load_model(const std::string& path);

}  // namespace flr::io
