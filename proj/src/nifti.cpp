#include "hnrfs/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "hnrfs/errors.hpp"

namespace hnrfs {

namespace {

static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

// Byte offsets within the 348-byte NIfTI-1 header.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t qoffset_x = 268;
constexpr std::size_t srow_x = 280;
constexpr std::size_t srow_y = 296;
constexpr std::size_t srow_z = 312;
constexpr std::size_t magic = 344;
}  // namespace off

class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    std::array<char, sizeof(T)> raw{};
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }

 private:
  const std::vector<char>& bytes_;
  bool swap_;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
void decode(const std::vector<char>& bytes, std::size_t offset, std::size_t count, bool swap,
            std::vector<double>& out) {
  HeaderReader r(bytes, swap);
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(r.get<T>(offset + i * sizeof(T)));
}

ScalarVolume read_any(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string where = "'" + path.string() + "'";
  if (bytes.size() < kHeaderSize) throw FormatError(where + ": shorter than a NIfTI-1 header");
  if (std::memcmp(bytes.data() + off::magic, "n+1\0", 4) != 0) {
    if (std::memcmp(bytes.data() + off::magic, "ni1\0", 4) == 0) {
      throw UnsupportedFormat(where + ": two-file NIfTI (.hdr/.img) is not supported");
    }
    throw FormatError(where + ": bad NIfTI-1 magic");
  }

  bool swap = false;
  {
    const auto dim0 = HeaderReader(bytes, false).get<std::int16_t>(off::dim);
    if (dim0 < 1 || dim0 > 7) {
      swap = true;
      const auto swapped = HeaderReader(bytes, true).get<std::int16_t>(off::dim);
      if (swapped < 1 || swapped > 7) throw FormatError(where + ": dim[0] out of range in either byte order");
    }
  }
  const HeaderReader h(bytes, swap);
  if (h.get<std::int32_t>(off::sizeof_hdr) != static_cast<std::int32_t>(kHeaderSize)) {
    throw FormatError(where + ": sizeof_hdr is not 348");
  }

  const int ndim = h.get<std::int16_t>(off::dim);
  std::array<std::size_t, 3> n{1, 1, 1};
  for (int a = 1; a <= ndim; ++a) {
    const auto d = h.get<std::int16_t>(off::dim + 2 * static_cast<std::size_t>(a));
    if (d < 1) throw FormatError(where + ": non-positive dimension");
    if (a <= 3) {
      n[static_cast<std::size_t>(a - 1)] = static_cast<std::size_t>(d);
    } else if (d != 1) {
      throw UnsupportedFormat(where + ": only 3D volumes are supported");
    }
  }
  Point3 spacing;
  for (int a = 0; a < 3; ++a) {
    const double s = a < ndim ? std::abs(h.get<float>(off::pixdim + 4 * static_cast<std::size_t>(a + 1))) : 1.0;
    if (!(s > 0.0) || !std::isfinite(s)) throw FormatError(where + ": non-positive voxel spacing");
    spacing[a] = s;
  }

  Point3 origin = Point3::Zero();
  if (h.get<std::int16_t>(off::qform_code) > 0) {
    for (int a = 0; a < 3; ++a) origin[a] = h.get<float>(off::qoffset_x + 4 * static_cast<std::size_t>(a));
  } else if (h.get<std::int16_t>(off::sform_code) > 0) {
    origin = Point3(h.get<float>(off::srow_x + 12), h.get<float>(off::srow_y + 12),
                    h.get<float>(off::srow_z + 12));
  }

  const double vox_offset = h.get<float>(off::vox_offset);
  if (!(vox_offset >= static_cast<double>(kHeaderSize))) throw FormatError(where + ": bad vox_offset");
  const auto start = static_cast<std::size_t>(vox_offset);
  const std::size_t count = n[0] * n[1] * n[2];

  std::size_t width = 0;
  const auto type = h.get<std::int16_t>(off::datatype);
  switch (static_cast<NiftiType>(type)) {
    case NiftiType::uint8: width = 1; break;
    case NiftiType::int16: width = 2; break;
    case NiftiType::int32: width = 4; break;
    case NiftiType::float32: width = 4; break;
    case NiftiType::float64: width = 8; break;
    default: throw UnsupportedFormat(where + ": unsupported datatype " + std::to_string(type));
  }
  if (bytes.size() < start + count * width) throw FormatError(where + ": truncated voxel data");

  std::vector<double> values;
  switch (static_cast<NiftiType>(type)) {
    case NiftiType::uint8: decode<std::uint8_t>(bytes, start, count, swap, values); break;
    case NiftiType::int16: decode<std::int16_t>(bytes, start, count, swap, values); break;
    case NiftiType::int32: decode<std::int32_t>(bytes, start, count, swap, values); break;
    case NiftiType::float32: decode<float>(bytes, start, count, swap, values); break;
    case NiftiType::float64: decode<double>(bytes, start, count, swap, values); break;
  }

  const double slope = h.get<float>(off::scl_slope);
  const double inter = h.get<float>(off::scl_inter);
  if (slope != 0.0 && std::isfinite(slope) && (slope != 1.0 || inter != 0.0)) {
    for (double& v : values) v = v * slope + inter;
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw FormatError(where + ": non-finite voxel value");
  }
  return ScalarVolume({n[0], n[1], n[2]}, spacing, origin, std::move(values));
}

template <typename T>
void put(std::vector<char>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

template <typename Stored, typename Scalar>
void write_impl(const Volume<Scalar>& vol, NiftiType type, const std::filesystem::path& path) {
  for (int a = 0; a < 3; ++a) {
    if (vol.dims()[a] > 32767) throw InvalidArgument("write_nifti: dimension exceeds NIfTI-1 limit");
  }
  std::vector<char> buf(kVoxOffset, 0);
  put<std::int32_t>(buf, off::sizeof_hdr, static_cast<std::int32_t>(kHeaderSize));
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(vol.dims().nx),
                                        static_cast<std::int16_t>(vol.dims().ny),
                                        static_cast<std::int16_t>(vol.dims().nz),
                                        1, 1, 1, 1};
  for (std::size_t a = 0; a < dim.size(); ++a) put(buf, off::dim + 2 * a, dim[a]);
  put<std::int16_t>(buf, off::datatype, static_cast<std::int16_t>(type));
  put<std::int16_t>(buf, off::bitpix, static_cast<std::int16_t>(8 * sizeof(Stored)));
  put<float>(buf, off::pixdim, 1.0f);  // qfac
  for (int a = 0; a < 3; ++a) {
    put<float>(buf, off::pixdim + 4 * static_cast<std::size_t>(a + 1), static_cast<float>(vol.spacing()[a]));
  }
  put<float>(buf, off::vox_offset, static_cast<float>(kVoxOffset));
  put<float>(buf, off::scl_slope, 1.0f);
  put<float>(buf, off::scl_inter, 0.0f);
  buf[off::xyzt_units] = 2;  // millimetres
  put<std::int16_t>(buf, off::qform_code, 1);
  put<std::int16_t>(buf, off::sform_code, 1);
  for (int a = 0; a < 3; ++a) {
    put<float>(buf, off::quatern_b + 4 * static_cast<std::size_t>(a), 0.0f);
    put<float>(buf, off::qoffset_x + 4 * static_cast<std::size_t>(a), static_cast<float>(vol.origin()[a]));
  }
  const std::array<std::size_t, 3> rows{off::srow_x, off::srow_y, off::srow_z};
  for (int a = 0; a < 3; ++a) {
    const auto row = rows[static_cast<std::size_t>(a)];
    put<float>(buf, row + 4 * static_cast<std::size_t>(a), static_cast<float>(vol.spacing()[a]));
    put<float>(buf, row + 12, static_cast<float>(vol.origin()[a]));
  }
  std::memcpy(buf.data() + off::magic, "n+1\0", 4);

  buf.reserve(kVoxOffset + vol.size() * sizeof(Stored));
  for (Scalar v : vol.values()) {
    const auto stored = static_cast<Stored>(v);
    const auto* p = reinterpret_cast<const char*>(&stored);
    buf.insert(buf.end(), p, p + sizeof(Stored));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

ScalarVolume read_scalar_nifti(const std::filesystem::path& path) { return read_any(path); }

LabelVolume read_label_nifti(const std::filesystem::path& path) {
  const ScalarVolume raw = read_any(path);
  std::vector<Label> labels;
  labels.reserve(raw.size());
  for (double v : raw.values()) {
    if (v != std::floor(v) || v < 0.0 || v > kGtvn) {
      throw ValidationError("'" + path.string() + "': label value " + std::to_string(v) +
                            " is not in {0,1,2}");
    }
    labels.push_back(static_cast<Label>(v));
  }
  return LabelVolume(raw.dims(), raw.spacing(), raw.origin(), std::move(labels));
}

void write_nifti(const ScalarVolume& vol, const std::filesystem::path& path) {
  write_impl<float>(vol, NiftiType::float32, path);
}

void write_nifti(const LabelVolume& vol, const std::filesystem::path& path) {
  write_impl<std::uint8_t>(vol, NiftiType::uint8, path);
}

}  // namespace hnrfs
