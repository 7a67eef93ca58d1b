#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vesselseg {

/// One-way NIfTI-1 ingestion: voxel grid and pixdim spacing are mapped into
/// the native volume model ((D,H,W) = (nz,ny,nx)); orientation beyond axis
/// order is ignored. Little-endian, single-frame .nii only.
Volume3D import_nifti_image(const std::filesystem::path& path);

/// Label variant: voxel values must round to {0,1,2}. Annotated slices are
/// explicit metadata and cannot be inferred from the file, so the caller
/// provides them (empty means "none declared").
LabelVolume import_nifti_label(const std::filesystem::path& path,
                               std::vector<int> annotated_slices = {});

}  // namespace vesselseg
