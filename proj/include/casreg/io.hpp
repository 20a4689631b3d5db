#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "casreg/core.hpp"

// NIfTI-1 single-file (.nii / .nii.gz) subset plus a raw float32 format with a text sidecar.
//
// Axis mapping: NIfTI dim[1], dim[2], dim[3] map to H, W, L. NIfTI stores dim[1] fastest, so the
// payload is transposed on the way in and out.

namespace casreg {

namespace fs = std::filesystem;

namespace nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kDataOffset = 352;
inline constexpr std::int16_t kUint8 = 2;
inline constexpr std::int16_t kInt16 = 4;
inline constexpr std::int16_t kFloat32 = 16;
// qform_code .. srow_z
inline constexpr std::size_t kOrientationBegin = 252;
inline constexpr std::size_t kOrientationEnd = 328;

}  // namespace nifti

enum class FileFormat { nifti, raw };

namespace detail {

template <typename T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

template <typename T>
T read_at(const std::vector<unsigned char>& buf, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

template <typename T>
void write_at(std::vector<unsigned char>& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::vector<unsigned char> read_plain(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

/// Reads a file, transparently inflating it when it starts with the gzip magic 0x1F 0x8B.
inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::vector<unsigned char> raw = read_plain(path);
  if (raw.size() < 2 || raw[0] != 0x1F || raw[1] != 0x8B) return raw;

  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed");
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> chunk;
  zs.next_in = raw.data();
  zs.avail_in = static_cast<uInt>(raw.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("corrupt gzip stream in " + path.string());
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw IoError("truncated gzip stream in " + path.string());
    }
  }
  inflateEnd(&zs);
  return out;
}

/// Writes bytes, gzip-compressed when the path ends in ".gz". The gzip header carries no
/// timestamp so output bytes depend only on content.
inline void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::vector<unsigned char> payload;
  if (ends_with(path.string(), ".gz")) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
      throw IoError("zlib init failed");
    payload.resize(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 32);
    zs.next_in = const_cast<unsigned char*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = payload.data();
    zs.avail_out = static_cast<uInt>(payload.size());
    const int rc = deflate(&zs, Z_FINISH);
    payload.resize(zs.total_out);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw IoError("gzip compression failed for " + path.string());
  } else {
    payload = bytes;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline bool is_nifti_path(const fs::path& p) {
  const std::string s = p.string();
  return ends_with(s, ".nii") || ends_with(s, ".nii.gz");
}

/// Sidecar path for a raw payload: "<stem>.dims".
inline fs::path raw_sidecar(const fs::path& p) {
  fs::path s = p;
  return s.replace_extension(".dims");
}
inline fs::path raw_payload(const fs::path& p) {
  fs::path s = p;
  return s.replace_extension(".f32");
}

struct RawHeader {
  Dims dims;
  std::string token;  // "", "labels" or "field"
};

inline RawHeader read_raw_header(const fs::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open " + sidecar.string());
  std::string line;
  std::getline(in, line);
  std::istringstream ss(line);
  std::vector<long long> nums;
  std::string tok;
  RawHeader h;
  while (ss >> tok) {
    if (tok == "labels" || tok == "field") {
      h.token = tok;
      continue;
    }
    try {
      std::size_t used = 0;
      nums.push_back(std::stoll(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw IoError("malformed dims sidecar " + sidecar.string() + ": '" + tok + "'");
    }
  }
  if (nums.size() != 3) throw IoError("non-3D image: " + sidecar.string() + " declares " + std::to_string(nums.size()) + " dims");
  for (auto n : nums)
    if (n <= 0 || n > (1 << 20)) throw IoError("invalid dimension in " + sidecar.string());
  h.dims = {static_cast<int>(nums[0]), static_cast<int>(nums[1]), static_cast<int>(nums[2])};
  return h;
}

inline std::vector<float> read_f32_payload(const fs::path& payload, std::size_t count) {
  std::vector<unsigned char> bytes = read_plain(payload);
  if (bytes.size() < count * 4) {
    throw IoError("truncated payload: " + payload.string() + " holds " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(count * 4));
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) u = byteswap_value(u);
    std::memcpy(&out[i], &u, 4);
  }
  return out;
}

inline void write_f32_payload(const fs::path& payload, const std::vector<float>& values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &values[i], 4);
    if constexpr (std::endian::native == std::endian::big) u = byteswap_value(u);
    std::memcpy(bytes.data() + 4 * i, &u, 4);
  }
  write_file(payload, bytes);
}

inline void write_raw_header(const fs::path& sidecar, Dims d, const std::string& token) {
  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw IoError("cannot write " + sidecar.string());
  out << d.h << ' ' << d.w << ' ' << d.l;
  if (!token.empty()) out << ' ' << token;
  out << '\n';
  if (!out) throw IoError("write failed for " + sidecar.string());
}

/// Decoded NIfTI image: values in H/W/L order, plus the metadata we carry.
struct NiftiImage {
  Dims dims;
  std::int16_t datatype = nifti::kFloat32;
  std::vector<double> values;
  std::array<double, 3> spacing{1, 1, 1};
  std::vector<std::uint8_t> orientation;
};

inline NiftiImage read_nifti(const fs::path& path) {
  const std::vector<unsigned char> buf = read_file(path);
  if (buf.size() < nifti::kHeaderSize) throw IoError("truncated NIfTI header in " + path.string());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, buf.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (byteswap_value(sizeof_hdr) != 348) throw IoError("not a NIfTI-1 file: " + path.string());
    swap = true;
  }
  if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0) throw IoError("unsupported NIfTI magic (need n+1): " + path.string());

  const auto ndim = read_at<std::int16_t>(buf, 40, swap);
  if (ndim != 3) throw IoError("non-3D image: " + path.string() + " declares " + std::to_string(ndim) + " dims");
  NiftiImage img;
  const int n1 = read_at<std::int16_t>(buf, 42, swap);
  const int n2 = read_at<std::int16_t>(buf, 44, swap);
  const int n3 = read_at<std::int16_t>(buf, 46, swap);
  if (n1 <= 0 || n2 <= 0 || n3 <= 0) throw IoError("invalid NIfTI dims in " + path.string());
  img.dims = {n1, n2, n3};
  img.datatype = read_at<std::int16_t>(buf, 70, swap);
  for (int a = 0; a < 3; ++a) {
    const float p = read_at<float>(buf, 80 + 4 * static_cast<std::size_t>(a), swap);
    img.spacing[static_cast<std::size_t>(a)] = (p > 0 && std::isfinite(p)) ? p : 1.0;
  }
  const float vox_offset = read_at<float>(buf, 108, swap);
  const float slope = read_at<float>(buf, 112, swap);
  const float inter = read_at<float>(buf, 116, swap);
  img.orientation.assign(buf.begin() + nifti::kOrientationBegin, buf.begin() + nifti::kOrientationEnd);

  std::size_t elem = 0;
  switch (img.datatype) {
    case nifti::kUint8: elem = 1; break;
    case nifti::kInt16: elem = 2; break;
    case nifti::kFloat32: elem = 4; break;
    default: throw IoError("unsupported NIfTI datatype " + std::to_string(img.datatype) + " in " + path.string());
  }
  const std::size_t offset = vox_offset >= 352 ? static_cast<std::size_t>(vox_offset) : nifti::kDataOffset;
  const std::size_t count = img.dims.count();
  if (buf.size() < offset + count * elem) {
    throw IoError("truncated payload: " + path.string() + " declares " + to_string(img.dims) + " but holds " +
                  std::to_string(buf.size() - std::min(buf.size(), offset)) + " data bytes");
  }

  const bool scale = slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f);
  img.values.resize(count);
  // NIfTI index i + j*n1 + k*n1*n2 -> (x=i, y=j, z=k) in our layout.
  for (int k = 0; k < n3; ++k)
    for (int j = 0; j < n2; ++j)
      for (int i = 0; i < n1; ++i) {
        const std::size_t src = offset + elem * (static_cast<std::size_t>(i) + static_cast<std::size_t>(n1) * (j + static_cast<std::size_t>(n2) * k));
        double v = 0;
        switch (img.datatype) {
          case nifti::kUint8: v = buf[src]; break;
          case nifti::kInt16: v = read_at<std::int16_t>(buf, src, swap); break;
          default: v = read_at<float>(buf, src, swap); break;
        }
        if (scale) v = v * slope + inter;
        img.values[(static_cast<std::size_t>(i) * n2 + j) * n3 + k] = v;
      }
  return img;
}

inline void write_nifti(const fs::path& path, const NiftiImage& img) {
  std::size_t elem = img.datatype == nifti::kUint8 ? 1 : (img.datatype == nifti::kInt16 ? 2 : 4);
  const Dims d = img.dims;
  std::vector<unsigned char> buf(nifti::kDataOffset + elem * d.count(), 0);
  write_at<std::int32_t>(buf, 0, 348);
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(d.h), static_cast<std::int16_t>(d.w),
                               static_cast<std::int16_t>(d.l), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) write_at<std::int16_t>(buf, 40 + 2 * static_cast<std::size_t>(i), dim[i]);
  write_at<std::int16_t>(buf, 70, img.datatype);
  write_at<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * elem));
  const float pixdim[8] = {1.0f, static_cast<float>(img.spacing[0]), static_cast<float>(img.spacing[1]),
                           static_cast<float>(img.spacing[2]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) write_at<float>(buf, 76 + 4 * static_cast<std::size_t>(i), pixdim[i]);
  write_at<float>(buf, 108, static_cast<float>(nifti::kDataOffset));
  write_at<float>(buf, 112, 1.0f);
  write_at<float>(buf, 116, 0.0f);
  buf[123] = 2;  // xyzt_units: mm
  if (img.orientation.size() == nifti::kOrientationEnd - nifti::kOrientationBegin) {
    std::copy(img.orientation.begin(), img.orientation.end(), buf.begin() + nifti::kOrientationBegin);
  }
  std::memcpy(buf.data() + 344, "n+1\0", 4);

  for (int k = 0; k < d.l; ++k)
    for (int j = 0; j < d.w; ++j)
      for (int i = 0; i < d.h; ++i) {
        const double v = img.values[(static_cast<std::size_t>(i) * d.w + j) * d.l + k];
        const std::size_t dst = nifti::kDataOffset + elem * (static_cast<std::size_t>(i) + static_cast<std::size_t>(d.h) * (j + static_cast<std::size_t>(d.w) * k));
        switch (img.datatype) {
          case nifti::kUint8: buf[dst] = static_cast<unsigned char>(v); break;
          case nifti::kInt16: write_at<std::int16_t>(buf, dst, static_cast<std::int16_t>(v)); break;
          default: write_at<float>(buf, dst, static_cast<float>(v)); break;
        }
      }
  write_file(path, buf);
}

inline void ensure_parent(const fs::path& path) {
  const fs::path parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  if (!fs::exists(parent, ec)) throw IoError("directory does not exist: " + parent.string());
}

}  // namespace detail

inline Volume3 load_volume(const fs::path& path) {
  if (detail::is_nifti_path(path)) {
    detail::NiftiImage img = detail::read_nifti(path);
    for (double v : img.values)
      if (!std::isfinite(v)) throw IoError("non-finite voxel value in " + path.string());
    Volume3 out(img.dims, std::move(img.values));
    out.spacing = img.spacing;
    out.orientation = std::move(img.orientation);
    return out;
  }
  const std::string ext = path.extension().string();
  if (ext != ".f32" && ext != ".dims") throw IoError("unsupported format: " + path.string());
  const detail::RawHeader h = detail::read_raw_header(detail::raw_sidecar(path));
  if (h.token == "field") throw IoError("file holds a displacement field, not a volume: " + path.string());
  std::vector<float> f = detail::read_f32_payload(detail::raw_payload(path), h.dims.count());
  std::vector<Scalar> values(f.begin(), f.end());
  for (double v : values)
    if (!std::isfinite(v)) throw IoError("non-finite voxel value in " + path.string());
  return Volume3(h.dims, std::move(values));
}

/// Loads a label map; every value must be a non-negative integer.
inline LabelVolume load_labels(const fs::path& path) {
  const Volume3 v = load_volume(path);
  LabelVolume out(v.dims());
  out.spacing = v.spacing;
  out.orientation = v.orientation;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = v[i];
    if (s < 0 || s > 65535 || s != std::round(s)) throw IoError("label file holds a non-label value: " + path.string());
    out[i] = static_cast<Label>(s);
  }
  return out;
}

inline void save_volume(const Volume3& v, const fs::path& path) {
  detail::ensure_parent(path);
  if (detail::is_nifti_path(path)) {
    detail::NiftiImage img;
    img.dims = v.dims();
    img.datatype = nifti::kFloat32;
    img.values = v.data();
    img.spacing = v.spacing;
    img.orientation = v.orientation;
    detail::write_nifti(path, img);
    return;
  }
  if (path.extension() != ".f32") throw IoError("unsupported output format: " + path.string());
  detail::write_f32_payload(path, std::vector<float>(v.data().begin(), v.data().end()));
  detail::write_raw_header(detail::raw_sidecar(path), v.dims(), "");
}

/// Writes labels as an integer-typed file (uint8 when all labels fit, int16 otherwise).
inline void save_labels(const LabelVolume& l, const fs::path& path) {
  detail::ensure_parent(path);
  const Label max_label = l.empty() ? 0 : *std::max_element(l.data().begin(), l.data().end());
  if (detail::is_nifti_path(path)) {
    if (max_label > 32767) throw IoError("label value too large for int16 NIfTI");
    detail::NiftiImage img;
    img.dims = l.dims();
    img.datatype = max_label <= 255 ? nifti::kUint8 : nifti::kInt16;
    img.values.assign(l.data().begin(), l.data().end());
    img.spacing = l.spacing;
    img.orientation = l.orientation;
    detail::write_nifti(path, img);
    return;
  }
  if (path.extension() != ".f32") throw IoError("unsupported output format: " + path.string());
  detail::write_f32_payload(path, std::vector<float>(l.data().begin(), l.data().end()));
  detail::write_raw_header(detail::raw_sidecar(path), l.dims(), "labels");
}

/// Datatype code stored in a NIfTI header (for checks on written files).
inline std::int16_t nifti_datatype(const fs::path& path) { return detail::read_nifti(path).datatype; }

}  // namespace casreg
