#pragma once

#include "anatomy_warp/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace anatomy_warp {

enum class NiftiErrorKind {
  io,
  corrupt_header,
  non_positive_spacing,
  unsupported_datatype,
  truncated_data,
  invalid_content,
};

const char* to_string(NiftiErrorKind kind);

class NiftiError : public std::runtime_error {
 public:
  NiftiError(NiftiErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  NiftiErrorKind kind() const { return kind_; }

 private:
  NiftiErrorKind kind_;
};

#pragma pack(push, 1)
/// NIfTI-1 single-file header, 348 bytes.
struct NiftiHeader {
  std::int32_t sizeof_hdr = 348;
  char data_type[10] = {};
  char db_name[18] = {};
  std::int32_t extents = 0;
  std::int16_t session_error = 0;
  char regular = 'r';
  char dim_info = 0;
  std::int16_t dim[8] = {};
  float intent_p1 = 0, intent_p2 = 0, intent_p3 = 0;
  std::int16_t intent_code = 0;
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::int16_t slice_start = 0;
  float pixdim[8] = {};
  float vox_offset = 352;
  float scl_slope = 1;
  float scl_inter = 0;
  std::int16_t slice_end = 0;
  char slice_code = 0;
  char xyzt_units = 0;
  float cal_max = 0, cal_min = 0;
  float slice_duration = 0;
  float toffset = 0;
  std::int32_t glmax = 0, glmin = 0;
  char descrip[80] = {};
  char aux_file[24] = {};
  std::int16_t qform_code = 0, sform_code = 0;
  float quatern_b = 0, quatern_c = 0, quatern_d = 0;
  float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
  float srow_x[4] = {}, srow_y[4] = {}, srow_z[4] = {};
  char intent_name[16] = {};
  char magic[4] = {'n', '+', '1', '\0'};
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348);

namespace nifti_dtype {
inline constexpr std::int16_t uint8 = 2, int16 = 4, int32 = 8, float32 = 16, float64 = 64,
                              int8 = 256, uint16 = 512, uint32 = 768, int64 = 1024, uint64 = 1280;
}

/// Header plus the on-disk geometry of a file.
struct NiftiInfo {
  NiftiHeader header;
  VolumeGeometry geometry;
  std::int64_t channels = 1;
};

NiftiInfo read_nifti_info(const std::filesystem::path& path);

/// Scalar volume; scl_slope / scl_inter are applied. Files with more than
/// one channel are rejected.
ScalarVolume read_scalar_volume(const std::filesystem::path& path, NiftiInfo* info = nullptr);

/// All channels of a 3D or 4D file (4th dimension = channels).
template <typename Scalar>
MultiChannelVolume<Scalar> read_image(const std::filesystem::path& path, NiftiInfo* info = nullptr);

/// Integer label map. Floating-point files are accepted when every value is
/// a non-negative integer.
LabelVolume read_label_volume(const std::filesystem::path& path, NiftiInfo* info = nullptr);

/// Writers replace the file atomically (temp file + rename); a `.gz`
/// suffix selects gzip. When `like` is given, its orientation fields are
/// carried over.
void write_volume(const std::filesystem::path& path, const ScalarVolume& vol,
                  const NiftiHeader* like = nullptr);
void write_image(const std::filesystem::path& path, const MultiChannelVolume<float>& img,
                 const NiftiHeader* like = nullptr);
/// Written as uint16 when every label fits, int32 otherwise.
void write_label_volume(const std::filesystem::path& path, const LabelVolume& labels,
                        const NiftiHeader* like = nullptr);
/// Three float32 channels (x, y, z displacement in voxels).
void write_vector_field(const std::filesystem::path& path, const VectorField<double>& field,
                        const NiftiHeader* like = nullptr);

/// Atomic text-file write used for JSON/CSV outputs.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace anatomy_warp
