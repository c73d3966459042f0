#include "cvnet/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cvnet/error.hpp"

namespace cvnet {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "cvnet-volume";
// Upper bound on voxels per volume; larger headers are treated as overflow.
constexpr std::size_t kMaxVoxels = std::size_t{1} << 32;

ElementType parse_type(const std::string& s, const std::string& path) {
  if (s == "float32") return ElementType::Float32;
  if (s == "float64") return ElementType::Float64;
  if (s == "int16") return ElementType::Int16;
  if (s == "uint8") return ElementType::UInt8;
  throw FormatError(path + ": malformed header: unknown element type '" + s + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_header(std::ostream& os, const VolumeHeader& h) {
  os << kMagic << ' ' << h.version << '\n';
  os << "dims " << h.dims.d << ' ' << h.dims.h << ' ' << h.dims.w << '\n';
  os << "type " << to_string(h.type) << '\n';
  os << "spacing " << format_double(h.spacing[0]) << ' ' << format_double(h.spacing[1]) << ' '
     << format_double(h.spacing[2]) << '\n';
  os << "modality " << (h.modality.empty() ? "-" : h.modality) << '\n';
  os << "axes " << (h.axes.empty() ? "-" : h.axes) << '\n';
  os << "end\n";
}

struct OpenVolume {
  VolumeHeader header;
  std::ifstream stream;
  std::size_t payload_bytes = 0;
};

OpenVolume open_volume(const std::filesystem::path& path) {
  const std::string p = path.string();
  OpenVolume ov;
  ov.stream.open(path, std::ios::binary);
  if (!ov.stream) throw IoError(p + ": cannot open volume file");

  auto next_line = [&](const char* expect) {
    std::string line;
    if (!std::getline(ov.stream, line)) {
      throw FormatError(p + ": malformed header: missing '" + expect + "' line");
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key != expect) {
      throw FormatError(p + ": malformed header: expected '" + expect + "', found '" + key + "'");
    }
    std::string rest;
    std::getline(ls >> std::ws, rest);
    return rest;
  };

  VolumeHeader& h = ov.header;
  {
    std::istringstream ls(next_line(kMagic));
    if (!(ls >> h.version) || h.version != kVolumeFormatVersion) {
      throw FormatError(p + ": malformed header: unsupported format version");
    }
  }
  {
    std::istringstream ls(next_line("dims"));
    long long d = 0, hh = 0, w = 0;
    if (!(ls >> d >> hh >> w)) throw FormatError(p + ": malformed header: unreadable dims");
    if (d <= 0 || hh <= 0 || w <= 0) {
      throw FormatError(p + ": malformed header: dims must be positive, got " + std::to_string(d) + " " +
                        std::to_string(hh) + " " + std::to_string(w));
    }
    h.dims = {static_cast<std::size_t>(d), static_cast<std::size_t>(hh), static_cast<std::size_t>(w)};
  }
  h.type = parse_type(next_line("type"), p);
  {
    std::istringstream ls(next_line("spacing"));
    if (!(ls >> h.spacing[0] >> h.spacing[1] >> h.spacing[2])) {
      throw FormatError(p + ": malformed header: unreadable spacing");
    }
  }
  h.modality = next_line("modality");
  if (h.modality == "-") h.modality.clear();
  h.axes = next_line("axes");
  if (h.axes == "-") h.axes.clear();
  next_line("end");

  std::size_t voxels = 0, bytes = 0;
  if (__builtin_mul_overflow(h.dims.d, h.dims.h, &voxels) ||
      __builtin_mul_overflow(voxels, h.dims.w, &voxels) || voxels > kMaxVoxels ||
      __builtin_mul_overflow(voxels, element_size(h.type), &bytes)) {
    throw FormatError(p + ": dimension overflow: " + to_string(h.dims) + " exceeds the supported volume size");
  }
  ov.payload_bytes = bytes;

  const auto start = ov.stream.tellg();
  ov.stream.seekg(0, std::ios::end);
  const auto available = static_cast<std::size_t>(ov.stream.tellg() - start);
  ov.stream.seekg(start);
  if (available < bytes) {
    throw FormatError(p + ": truncated payload: expected " + std::to_string(bytes) + " bytes, found " +
                      std::to_string(available));
  }
  if (available > bytes) {
    throw FormatError(p + ": trailing data: expected " + std::to_string(bytes) + " payload bytes, found " +
                      std::to_string(available));
  }
  return ov;
}

template <typename Raw>
std::vector<Raw> read_raw(OpenVolume& ov, std::size_t count) {
  std::vector<Raw> raw(count);
  ov.stream.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(Raw)));
  if (!ov.stream) throw IoError("failed reading volume payload");
  return raw;
}

template <typename T>
void write_volume(const Volume<T>& v, ElementType type, const std::filesystem::path& path) {
  if (v.dims.size() == 0) throw ShapeError(path.string() + ": refusing to save an empty volume");
  if (v.data.size() != v.dims.size()) throw ShapeError(path.string() + ": payload does not match dims");
  VolumeHeader h;
  h.dims = v.dims;
  h.type = type;
  h.spacing = v.spacing;
  h.modality = v.modality;
  h.axes = v.axes;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  write_header(os, h);
  os.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(T)));
  if (!os) throw IoError(path.string() + ": write failed");
}

template <typename V>
void apply_header(V& v, const VolumeHeader& h) {
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.modality = h.modality;
  v.axes = h.axes;
}

}  // namespace

std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::Float32: return 4;
    case ElementType::Float64: return 8;
    case ElementType::Int16: return 2;
    case ElementType::UInt8: return 1;
  }
  return 0;
}

std::string to_string(ElementType t) {
  switch (t) {
    case ElementType::Float32: return "float32";
    case ElementType::Float64: return "float64";
    case ElementType::Int16: return "int16";
    case ElementType::UInt8: return "uint8";
  }
  return "?";
}

VolumeHeader read_volume_header(const std::filesystem::path& path) { return open_volume(path).header; }

void save_volume(const ScalarVolume& volume, const std::filesystem::path& path) {
  write_volume(volume, ElementType::Float32, path);
}

void save_volume(const Volume<std::uint8_t>& volume, const std::filesystem::path& path) {
  write_volume(volume, ElementType::UInt8, path);
}

ScalarVolume load_scalar_volume(const std::filesystem::path& path) {
  OpenVolume ov = open_volume(path);
  ScalarVolume v;
  apply_header(v, ov.header);
  const std::size_t n = ov.header.dims.size();
  switch (ov.header.type) {
    case ElementType::Float32: v.data = read_raw<float>(ov, n); break;
    case ElementType::Float64: {
      const auto raw = read_raw<double>(ov, n);
      v.data.assign(raw.begin(), raw.end());
      break;
    }
    case ElementType::Int16: {
      const auto raw = read_raw<std::int16_t>(ov, n);
      v.data.assign(raw.begin(), raw.end());
      break;
    }
    case ElementType::UInt8: {
      const auto raw = read_raw<std::uint8_t>(ov, n);
      v.data.assign(raw.begin(), raw.end());
      break;
    }
  }
  return v;
}

LabelVolume load_label_volume(const std::filesystem::path& path) {
  OpenVolume ov = open_volume(path);
  if (ov.header.type != ElementType::UInt8) {
    throw FormatError(path.string() + ": label volumes must be uint8, found " + to_string(ov.header.type));
  }
  LabelVolume v;
  apply_header(v, ov.header);
  v.data = read_raw<std::uint8_t>(ov, ov.header.dims.size());
  require_brats_labels(v, path.string().c_str());
  return v;
}

MaskVolume load_mask_volume(const std::filesystem::path& path) {
  OpenVolume ov = open_volume(path);
  if (ov.header.type != ElementType::UInt8) {
    throw FormatError(path.string() + ": mask volumes must be uint8, found " + to_string(ov.header.type));
  }
  MaskVolume v;
  apply_header(v, ov.header);
  v.data = read_raw<std::uint8_t>(ov, ov.header.dims.size());
  require_binary(v, path.string().c_str());
  return v;
}

template <typename T>
void dump_tensor(const Tensor<T>& tensor, std::size_t n, std::size_t channel, const std::filesystem::path& path) {
  require_rank5(tensor.shape, "dump_tensor");
  if (n >= tensor.dim(0) || channel >= tensor.dim(1)) {
    throw ShapeError("dump_tensor: item/channel outside " + to_string(tensor.shape));
  }
  ScalarVolume v(Dims3{tensor.dim(2), tensor.dim(3), tensor.dim(4)});
  v.modality = "tensor";
  const std::size_t sp = v.dims.size();
  const std::size_t base = (n * tensor.dim(1) + channel) * sp;
  for (std::size_t i = 0; i < sp; ++i) v.data[i] = static_cast<float>(tensor.data[base + i]);
  save_volume(v, path);
}

template void dump_tensor<float>(const Tensor<float>&, std::size_t, std::size_t, const std::filesystem::path&);
template void dump_tensor<double>(const Tensor<double>&, std::size_t, std::size_t, const std::filesystem::path&);

// --- NIfTI-1 ---------------------------------------------------------------

namespace {

template <typename V>
V read_at(const std::vector<char>& buf, std::size_t offset) {
  V v;
  std::memcpy(&v, buf.data() + offset, sizeof(V));
  return v;
}

}  // namespace

ScalarVolume import_nifti(const std::filesystem::path& path, std::vector<std::string>* notices) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(p + ": cannot open NIfTI file");
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
      static_cast<unsigned char>(bytes[1]) == 0x8b) {
    throw FormatError(p + ": compressed NIfTI (gzip) is not supported; decompress first");
  }
  if (bytes.size() < 348) throw FormatError(p + ": file too short for a NIfTI-1 header");
  const auto sizeof_hdr = read_at<std::int32_t>(bytes, 0);
  if (sizeof_hdr != 348) {
    throw FormatError(p + ": sizeof_hdr is " + std::to_string(sizeof_hdr) +
                      " (not a little-endian NIfTI-1 header)");
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
    throw FormatError(p + ": bad NIfTI magic (expected single-file \"n+1\")");
  }
  const auto dim0 = read_at<std::int16_t>(bytes, 40);
  if (dim0 < 1 || dim0 > 7) throw FormatError(p + ": invalid NIfTI dim[0]");
  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = read_at<std::int16_t>(bytes, 40 + 2 * i);
  for (int i = 1; i <= 3; ++i) {
    if (i <= dim0 && dim[i] <= 0) throw FormatError(p + ": non-positive NIfTI dimension");
  }
  for (int i = 4; i <= dim0; ++i) {
    if (dim[i] > 1) throw FormatError(p + ": only 3-D NIfTI volumes are supported");
  }
  const std::size_t nx = dim[1], ny = dim0 >= 2 ? dim[2] : 1, nz = dim0 >= 3 ? dim[3] : 1;
  const auto datatype = read_at<std::int16_t>(bytes, 70);
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = read_at<float>(bytes, 76 + 4 * i);
  const auto vox_offset = read_at<float>(bytes, 108);
  const auto scl_slope = read_at<float>(bytes, 112);
  const auto scl_inter = read_at<float>(bytes, 116);

  std::size_t esize = 0;
  switch (datatype) {
    case 2: esize = 1; break;
    case 4: esize = 2; break;
    case 16: esize = 4; break;
    default:
      throw FormatError(p + ": unsupported NIfTI datatype " + std::to_string(datatype) +
                        " (supported: uint8, int16, float32)");
  }
  if (vox_offset < 348.0f) throw FormatError(p + ": vox_offset inside the header");
  const std::size_t offset = static_cast<std::size_t>(vox_offset);
  const std::size_t count = nx * ny * nz;
  if (bytes.size() < offset + count * esize) {
    throw FormatError(p + ": truncated payload: expected " + std::to_string(count * esize) + " bytes, found " +
                      std::to_string(bytes.size() > offset ? bytes.size() - offset : 0));
  }
  if (notices) {
    if (scl_slope != 0.0f && (scl_slope != 1.0f || scl_inter != 0.0f)) {
      notices->push_back("scl_slope/scl_inter ignored");
    }
    if (offset > 352) notices->push_back("header extensions ignored");
    notices->push_back("orientation (qform/sform) ignored; axis order left undeclared");
  }

  ScalarVolume v(Dims3{nz, ny, nx});
  v.spacing = {dim0 >= 3 ? std::abs(pixdim[3]) : 1.0, dim0 >= 2 ? std::abs(pixdim[2]) : 1.0,
               std::abs(pixdim[1])};
  for (auto& s : v.spacing) {
    if (s <= 0.0) s = 1.0;
  }
  const char* payload = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i) {
    switch (datatype) {
      case 2: v.data[i] = static_cast<unsigned char>(payload[i]); break;
      case 4: {
        std::int16_t x;
        std::memcpy(&x, payload + 2 * i, 2);
        v.data[i] = x;
        break;
      }
      case 16: std::memcpy(&v.data[i], payload + 4 * i, 4); break;
    }
  }
  return v;
}

}  // namespace cvnet
