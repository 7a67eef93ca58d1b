#pragma once

#include <filesystem>

#include "vesselseg/dbfunet.hpp"

namespace vesselseg {

/// Versioned checkpoint: magic + JSON manifest (net config, named parameter
/// shapes) + raw little-endian f32 payload. Loading rebuilds the model from
/// the embedded config and validates every name and shape.
void save_checkpoint(nn::DbfUNet& model, const std::filesystem::path& path);
nn::DbfUNet load_checkpoint(const std::filesystem::path& path);

}  // namespace vesselseg
