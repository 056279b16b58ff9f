#include "anatomy_warp/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace anatomy_warp {

static_assert(std::endian::native == std::endian::little, "NIfTI writer assumes a little-endian host");

const char* to_string(NiftiErrorKind kind) {
  switch (kind) {
    case NiftiErrorKind::io: return "io";
    case NiftiErrorKind::corrupt_header: return "corrupt_header";
    case NiftiErrorKind::non_positive_spacing: return "non_positive_spacing";
    case NiftiErrorKind::unsupported_datatype: return "unsupported_datatype";
    case NiftiErrorKind::truncated_data: return "truncated_data";
    case NiftiErrorKind::invalid_content: return "invalid_content";
  }
  return "unknown";
}

namespace {

template <typename T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

template <typename T, std::size_t N>
void swap_all(T (&arr)[N]) {
  for (auto& v : arr) swap_bytes(v);
}

void swap_header(NiftiHeader& h) {
  swap_bytes(h.sizeof_hdr);
  swap_bytes(h.extents);
  swap_bytes(h.session_error);
  swap_all(h.dim);
  swap_bytes(h.intent_p1);
  swap_bytes(h.intent_p2);
  swap_bytes(h.intent_p3);
  swap_bytes(h.intent_code);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  swap_bytes(h.slice_start);
  swap_all(h.pixdim);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.slice_end);
  swap_bytes(h.cal_max);
  swap_bytes(h.cal_min);
  swap_bytes(h.slice_duration);
  swap_bytes(h.toffset);
  swap_bytes(h.glmax);
  swap_bytes(h.glmin);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  swap_bytes(h.quatern_b);
  swap_bytes(h.quatern_c);
  swap_bytes(h.quatern_d);
  swap_bytes(h.qoffset_x);
  swap_bytes(h.qoffset_y);
  swap_bytes(h.qoffset_z);
  swap_all(h.srow_x);
  swap_all(h.srow_y);
  swap_all(h.srow_z);
}

int bytes_per_voxel(std::int16_t dtype) {
  switch (dtype) {
    case nifti_dtype::uint8:
    case nifti_dtype::int8: return 1;
    case nifti_dtype::int16:
    case nifti_dtype::uint16: return 2;
    case nifti_dtype::int32:
    case nifti_dtype::uint32:
    case nifti_dtype::float32: return 4;
    case nifti_dtype::float64:
    case nifti_dtype::int64:
    case nifti_dtype::uint64: return 8;
    default: return 0;
  }
}

class GzReader {
 public:
  explicit GzReader(const std::filesystem::path& path) : file_(gzopen(path.c_str(), "rb")) {
    if (!file_)
      throw NiftiError(NiftiErrorKind::io, "cannot open " + path.string() + " for reading");
  }
  ~GzReader() {
    if (file_) gzclose(file_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  std::size_t read(void* dst, std::size_t n) {
    std::size_t total = 0;
    auto* out = static_cast<char*>(dst);
    while (total < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 30));
      const int got = gzread(file_, out + total, chunk);
      if (got < 0) throw NiftiError(NiftiErrorKind::io, "read error while decompressing");
      if (got == 0) break;
      total += static_cast<std::size_t>(got);
    }
    return total;
  }

 private:
  gzFile file_;
};

struct RawNifti {
  NiftiInfo info;
  bool swapped = false;
  std::vector<unsigned char> bytes;
};

NiftiInfo parse_header(NiftiHeader h, const std::string& name, bool& swapped) {
  swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    if (h.sizeof_hdr != 348)
      throw NiftiError(NiftiErrorKind::corrupt_header, name + ": sizeof_hdr is not 348");
    swapped = true;
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0) {
    if (std::memcmp(h.magic, "ni1", 4) == 0)
      throw NiftiError(NiftiErrorKind::unsupported_datatype,
                       name + ": two-file (.hdr/.img) NIfTI is not supported");
    throw NiftiError(NiftiErrorKind::corrupt_header, name + ": bad magic string");
  }
  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7)
    throw NiftiError(NiftiErrorKind::corrupt_header, name + ": dim[0] out of range");
  for (int i = 1; i <= ndim; ++i)
    if (h.dim[i] < 1) throw NiftiError(NiftiErrorKind::corrupt_header, name + ": non-positive dim");
  for (int i = 5; i <= ndim; ++i)
    if (h.dim[i] != 1)
      throw NiftiError(NiftiErrorKind::corrupt_header, name + ": more than four dimensions");
  if (!(h.vox_offset >= 348.0f) || !std::isfinite(h.vox_offset))
    throw NiftiError(NiftiErrorKind::corrupt_header, name + ": invalid vox_offset");
  if (bytes_per_voxel(h.datatype) == 0)
    throw NiftiError(NiftiErrorKind::unsupported_datatype,
                     name + ": unsupported datatype code " + std::to_string(h.datatype));
  if (h.bitpix != 8 * bytes_per_voxel(h.datatype))
    throw NiftiError(NiftiErrorKind::corrupt_header, name + ": bitpix inconsistent with datatype");

  NiftiInfo info;
  info.header = h;
  std::array<std::int64_t, 3> shape{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  for (int a = 0; a < 3; ++a) {
    if (a < ndim) {
      shape[a] = h.dim[a + 1];
      spacing[a] = h.pixdim[a + 1];
    }
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw NiftiError(NiftiErrorKind::non_positive_spacing,
                       name + ": spacing along axis " + std::to_string(a) + " is " +
                           std::to_string(spacing[a]));
  }
  info.geometry = VolumeGeometry(shape, spacing);
  info.channels = ndim >= 4 ? h.dim[4] : 1;
  return info;
}

RawNifti read_raw(const std::filesystem::path& path) {
  GzReader in(path);
  NiftiHeader h;
  if (in.read(&h, sizeof h) != sizeof h)
    throw NiftiError(NiftiErrorKind::corrupt_header, path.string() + ": file shorter than header");
  RawNifti raw;
  raw.info = parse_header(h, path.string(), raw.swapped);
  const auto& hh = raw.info.header;

  std::vector<unsigned char> skip(static_cast<std::size_t>(hh.vox_offset) - sizeof h);
  if (in.read(skip.data(), skip.size()) != skip.size())
    throw NiftiError(NiftiErrorKind::truncated_data, path.string() + ": truncated before data");

  const std::size_t n = static_cast<std::size_t>(raw.info.geometry.voxel_count() * raw.info.channels);
  raw.bytes.resize(n * static_cast<std::size_t>(bytes_per_voxel(hh.datatype)));
  if (in.read(raw.bytes.data(), raw.bytes.size()) != raw.bytes.size())
    throw NiftiError(NiftiErrorKind::truncated_data,
                     path.string() + ": expected " + std::to_string(raw.bytes.size()) +
                         " data bytes");
  return raw;
}

template <typename T>
T load(const unsigned char* p, bool swapped) {
  T v;
  std::memcpy(&v, p, sizeof v);
  if (swapped) swap_bytes(v);
  return v;
}

// Element i of the raw buffer as double (exact for all supported integer
// widths up to 2^53).
double element(const RawNifti& raw, std::size_t i) {
  const auto dt = raw.info.header.datatype;
  const unsigned char* p = raw.bytes.data() + i * static_cast<std::size_t>(bytes_per_voxel(dt));
  switch (dt) {
    case nifti_dtype::uint8: return load<std::uint8_t>(p, false);
    case nifti_dtype::int8: return load<std::int8_t>(p, false);
    case nifti_dtype::int16: return load<std::int16_t>(p, raw.swapped);
    case nifti_dtype::uint16: return load<std::uint16_t>(p, raw.swapped);
    case nifti_dtype::int32: return load<std::int32_t>(p, raw.swapped);
    case nifti_dtype::uint32: return load<std::uint32_t>(p, raw.swapped);
    case nifti_dtype::int64: return static_cast<double>(load<std::int64_t>(p, raw.swapped));
    case nifti_dtype::uint64: return static_cast<double>(load<std::uint64_t>(p, raw.swapped));
    case nifti_dtype::float32: return load<float>(p, raw.swapped);
    case nifti_dtype::float64: return load<double>(p, raw.swapped);
  }
  return 0.0;
}

bool has_scaling(const NiftiHeader& h) {
  return h.scl_slope != 0.0f && (h.scl_slope != 1.0f || h.scl_inter != 0.0f);
}

std::vector<double> decode(const RawNifti& raw) {
  const std::size_t n = raw.bytes.size() / static_cast<std::size_t>(bytes_per_voxel(raw.info.header.datatype));
  std::vector<double> out(n);
  const auto& h = raw.info.header;
  const bool scale = has_scaling(h);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = element(raw, i);
    if (scale) out[i] = out[i] * h.scl_slope + h.scl_inter;
  }
  return out;
}

NiftiHeader make_header(const VolumeGeometry& g, std::int64_t channels, std::int16_t dtype,
                        const NiftiHeader* like) {
  NiftiHeader h;
  if (like) {
    h = *like;
  } else {
    h.pixdim[0] = 1.0f;  // qfac
    h.qform_code = 1;
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(g.spacing[0]);
    h.srow_y[1] = static_cast<float>(g.spacing[1]);
    h.srow_z[2] = static_cast<float>(g.spacing[2]);
    h.xyzt_units = 2;  // mm
  }
  h.sizeof_hdr = 348;
  std::fill(std::begin(h.dim), std::end(h.dim), std::int16_t{1});
  h.dim[0] = channels > 1 ? 4 : 3;
  for (int a = 0; a < 3; ++a) {
    if (g.shape[a] > std::numeric_limits<std::int16_t>::max())
      throw NiftiError(NiftiErrorKind::invalid_content, "volume too large for NIfTI-1 dim field");
    h.dim[a + 1] = static_cast<std::int16_t>(g.shape[a]);
    h.pixdim[a + 1] = static_cast<float>(g.spacing[a]);
  }
  h.dim[4] = static_cast<std::int16_t>(channels);
  if (h.pixdim[0] != -1.0f) h.pixdim[0] = 1.0f;
  h.datatype = dtype;
  h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(dtype));
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.cal_min = h.cal_max = 0.0f;
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

bool ends_with_gz(const std::filesystem::path& p) {
  const auto s = p.string();
  return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

void write_bytes_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  auto tmp = path;
  tmp += ".part";
  if (ends_with_gz(path)) {
    gzFile f = gzopen(tmp.c_str(), "wb6");
    if (!f) throw NiftiError(NiftiErrorKind::io, "cannot open " + tmp.string() + " for writing");
    std::size_t off = 0;
    bool ok = true;
    while (off < bytes.size() && ok) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
      ok = gzwrite(f, bytes.data() + off, chunk) == static_cast<int>(chunk);
      off += chunk;
    }
    if (gzclose(f) != Z_OK || !ok)
      throw NiftiError(NiftiErrorKind::io, "failed writing " + tmp.string());
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw NiftiError(NiftiErrorKind::io, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw NiftiError(NiftiErrorKind::io, "cannot rename onto " + path.string() + ": " + ec.message());
}

template <typename T, typename Source>
void write_typed(const std::filesystem::path& path, const VolumeGeometry& g, std::int64_t channels,
                 std::int16_t dtype, const NiftiHeader* like, Source&& value_at) {
  const NiftiHeader h = make_header(g, channels, dtype, like);
  const std::size_t n = static_cast<std::size_t>(g.voxel_count() * channels);
  std::vector<unsigned char> bytes(352 + n * sizeof(T), 0);
  std::memcpy(bytes.data(), &h, sizeof h);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = value_at(i);
    std::memcpy(bytes.data() + 352 + i * sizeof(T), &v, sizeof v);
  }
  write_bytes_atomic(path, bytes);
}

}  // namespace

NiftiInfo read_nifti_info(const std::filesystem::path& path) {
  GzReader in(path);
  NiftiHeader h;
  if (in.read(&h, sizeof h) != sizeof h)
    throw NiftiError(NiftiErrorKind::corrupt_header, path.string() + ": file shorter than header");
  bool swapped = false;
  return parse_header(h, path.string(), swapped);
}

ScalarVolume read_scalar_volume(const std::filesystem::path& path, NiftiInfo* info) {
  const RawNifti raw = read_raw(path);
  if (raw.info.channels != 1)
    throw NiftiError(NiftiErrorKind::invalid_content,
                     path.string() + ": expected a single-channel volume, found " +
                         std::to_string(raw.info.channels) + " channels");
  if (info) *info = raw.info;
  const auto values = decode(raw);
  ScalarVolume vol(raw.info.geometry);
  std::copy(values.begin(), values.end(), vol.data());
  return vol;
}

template <typename Scalar>
MultiChannelVolume<Scalar> read_image(const std::filesystem::path& path, NiftiInfo* info) {
  const RawNifti raw = read_raw(path);
  if (info) *info = raw.info;
  const auto values = decode(raw);
  const auto n = static_cast<std::size_t>(raw.info.geometry.voxel_count());
  std::vector<Volume<Scalar>> channels;
  for (std::int64_t c = 0; c < raw.info.channels; ++c) {
    Volume<Scalar> vol(raw.info.geometry);
    for (std::size_t i = 0; i < n; ++i)
      vol[static_cast<std::int64_t>(i)] = static_cast<Scalar>(values[static_cast<std::size_t>(c) * n + i]);
    channels.push_back(std::move(vol));
  }
  return MultiChannelVolume<Scalar>(std::move(channels));
}

template MultiChannelVolume<float> read_image<float>(const std::filesystem::path&, NiftiInfo*);
template MultiChannelVolume<double> read_image<double>(const std::filesystem::path&, NiftiInfo*);

LabelVolume read_label_volume(const std::filesystem::path& path, NiftiInfo* info) {
  const RawNifti raw = read_raw(path);
  if (raw.info.channels != 1)
    throw NiftiError(NiftiErrorKind::invalid_content, path.string() + ": label map must have one channel");
  if (info) *info = raw.info;
  const auto values = decode(raw);
  LabelVolume vol(raw.info.geometry);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= 0.0) || v != std::floor(v) || v > std::numeric_limits<std::int32_t>::max())
      throw NiftiError(NiftiErrorKind::invalid_content,
                       path.string() + ": label values must be non-negative integers");
    vol[static_cast<std::int64_t>(i)] = static_cast<std::int32_t>(v);
  }
  return vol;
}

void write_volume(const std::filesystem::path& path, const ScalarVolume& vol, const NiftiHeader* like) {
  write_typed<double>(path, vol.geometry(), 1, nifti_dtype::float64, like,
                      [&](std::size_t i) { return vol[static_cast<std::int64_t>(i)]; });
}

void write_image(const std::filesystem::path& path, const MultiChannelVolume<float>& img,
                 const NiftiHeader* like) {
  const auto n = static_cast<std::size_t>(img.geometry().voxel_count());
  write_typed<float>(path, img.geometry(), static_cast<std::int64_t>(img.channel_count()),
                     nifti_dtype::float32, like, [&](std::size_t i) {
                       return img.channel(i / n)[static_cast<std::int64_t>(i % n)];
                     });
}

void write_label_volume(const std::filesystem::path& path, const LabelVolume& labels,
                        const NiftiHeader* like) {
  const auto& v = labels.values();
  if (v.size() > 0 && v.minCoeff() < 0)
    throw NiftiError(NiftiErrorKind::invalid_content, "negative label values cannot be written");
  const bool fits16 = v.size() == 0 || v.maxCoeff() <= std::numeric_limits<std::uint16_t>::max();
  auto at = [&](std::size_t i) { return labels[static_cast<std::int64_t>(i)]; };
  if (fits16)
    write_typed<std::uint16_t>(path, labels.geometry(), 1, nifti_dtype::uint16, like,
                               [&](std::size_t i) { return static_cast<std::uint16_t>(at(i)); });
  else
    write_typed<std::int32_t>(path, labels.geometry(), 1, nifti_dtype::int32, like, at);
}

void write_vector_field(const std::filesystem::path& path, const VectorField<double>& field,
                        const NiftiHeader* like) {
  const auto n = static_cast<std::size_t>(field.geometry().voxel_count());
  write_typed<float>(path, field.geometry(), 3, nifti_dtype::float32, like, [&](std::size_t i) {
    return static_cast<float>(field.component(static_cast<int>(i / n))[static_cast<std::int64_t>(i % n)]);
  });
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << contents;
    out.close();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace anatomy_warp
