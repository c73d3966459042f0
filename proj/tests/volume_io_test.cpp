#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "cvnet/error.hpp"
#include "cvnet/volume_io.hpp"
#include "fixtures.hpp"

using namespace cvnet;
namespace fs = std::filesystem;

namespace {

ScalarVolume random_volume(Dims3 d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 3.0f);
  ScalarVolume v(d);
  for (auto& x : v.data) x = g(rng);
  v.spacing = {1.2, 0.9375, 0.9375};
  v.modality = "t2";
  v.axes = "SI AP LR";
  return v;
}

std::string read_all(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_all(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << s;
}

template <typename Fn>
std::string error_of(Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

struct NiftiBuilder {
  std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  std::int16_t datatype = 16;
  float pixdim[8] = {1, 0.5f, 0.75f, 2.0f, 1, 1, 1, 1};
  float vox_offset = 352;
  float scl_slope = 0;
  const char* magic = "n+1";
  std::string payload;

  std::string bytes() const {
    std::string b(static_cast<std::size_t>(vox_offset), '\0');
    const std::int32_t sz = 348;
    std::memcpy(b.data(), &sz, 4);
    std::memcpy(b.data() + 40, dim, sizeof dim);
    std::memcpy(b.data() + 70, &datatype, 2);
    std::memcpy(b.data() + 76, pixdim, sizeof pixdim);
    std::memcpy(b.data() + 108, &vox_offset, 4);
    std::memcpy(b.data() + 112, &scl_slope, 4);
    std::memcpy(b.data() + 344, magic, 4);
    return b + payload;
  }
};

template <typename V>
std::string pack(const std::vector<V>& v) {
  std::string s(v.size() * sizeof(V), '\0');
  std::memcpy(s.data(), v.data(), s.size());
  return s;
}

}  // namespace

TEST(VolumeFile, RoundTripIsBitwise) {
  const auto dir = fixture::temp_dir("vol");
  const auto v = random_volume({8, 8, 8}, 42);
  save_volume(v, dir / "a.vol");
  const auto back = load_scalar_volume(dir / "a.vol");
  EXPECT_EQ(back.dims, v.dims);
  EXPECT_EQ(back.spacing, v.spacing);
  EXPECT_EQ(back.modality, "t2");
  EXPECT_EQ(back.axes, "SI AP LR");
  ASSERT_EQ(back.data.size(), v.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(float)), 0);
  save_volume(back, dir / "b.vol");
  EXPECT_TRUE(fixture::same_bytes(dir / "a.vol", dir / "b.vol"));
}

TEST(VolumeFile, HeaderLayout) {
  const auto dir = fixture::temp_dir("vol");
  ScalarVolume v(Dims3{1, 2, 3}, 1.5f);
  save_volume(v, dir / "h.vol");
  const auto s = read_all(dir / "h.vol");
  const std::string header = "cvnet-volume 1\ndims 1 2 3\ntype float32\nspacing 1 1 1\nmodality -\naxes -\nend\n";
  ASSERT_EQ(s.size(), header.size() + 6 * 4);
  EXPECT_EQ(s.substr(0, header.size()), header);
  const auto h = read_volume_header(dir / "h.vol");
  EXPECT_EQ(h.type, ElementType::Float32);
  EXPECT_TRUE(h.modality.empty());
}

TEST(VolumeFile, LabelAndMaskRoundTrip) {
  const auto dir = fixture::temp_dir("vol");
  const auto labels = fixture::random_labels({4, 5, 6}, 3);
  save_volume(labels, dir / "seg.vol");
  EXPECT_EQ(load_label_volume(dir / "seg.vol").data, labels.data);
  const auto mask = fixture::random_mask({3, 3, 3}, 0.5, 4);
  save_volume(mask, dir / "m.vol");
  EXPECT_EQ(load_mask_volume(dir / "m.vol").data, mask.data);
  EXPECT_THROW(load_mask_volume(dir / "seg.vol"), ShapeError);
  EXPECT_THROW(load_label_volume(dir / "../nonexistent.vol"), IoError);
}

TEST(VolumeFile, UInt8WidensToScalar) {
  const auto dir = fixture::temp_dir("vol");
  const auto labels = fixture::random_labels({2, 2, 2}, 5);
  save_volume(labels, dir / "seg.vol");
  const auto v = load_scalar_volume(dir / "seg.vol");
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.data[i], static_cast<float>(labels.data[i]));
  EXPECT_THROW(load_label_volume([&] {
                 save_volume(random_volume({2, 2, 2}, 1), dir / "f.vol");
                 return dir / "f.vol";
               }()),
               FormatError);
}

TEST(VolumeFile, TruncationNamesByteCounts) {
  const auto dir = fixture::temp_dir("vol");
  save_volume(random_volume({8, 8, 8}, 1), dir / "t.vol");
  auto s = read_all(dir / "t.vol");
  s.resize(s.size() - 100);
  write_all(dir / "t.vol", s);
  const auto msg = error_of([&] { load_scalar_volume(dir / "t.vol"); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected 2048 bytes"), std::string::npos) << msg;
  EXPECT_NE(msg.find("found 1948"), std::string::npos) << msg;
}

TEST(VolumeFile, TrailingBytesRejected) {
  const auto dir = fixture::temp_dir("vol");
  save_volume(random_volume({2, 2, 2}, 1), dir / "t.vol");
  write_all(dir / "t.vol", read_all(dir / "t.vol") + "xx");
  EXPECT_THROW(load_scalar_volume(dir / "t.vol"), FormatError);
}

TEST(VolumeFile, DistinctHeaderDiagnostics) {
  const auto dir = fixture::temp_dir("vol");
  auto write = [&](const std::string& dims, const std::string& type = "float32") {
    write_all(dir / "x.vol", "cvnet-volume 1\ndims " + dims + "\ntype " + type +
                                 "\nspacing 1 1 1\nmodality -\naxes -\nend\n");
    return error_of([&] { load_scalar_volume(dir / "x.vol"); });
  };
  EXPECT_NE(write("0 4 4").find("dims must be positive"), std::string::npos);
  EXPECT_NE(write("4 4").find("unreadable dims"), std::string::npos);
  EXPECT_NE(write("100000 100000 100000").find("dimension overflow"), std::string::npos);
  EXPECT_NE(write("1 1 1", "complex").find("unknown element type"), std::string::npos);
  write_all(dir / "x.vol", "not-a-volume 1\n");
  EXPECT_NE(error_of([&] { load_scalar_volume(dir / "x.vol"); }).find("malformed header"), std::string::npos);
  write_all(dir / "x.vol", "cvnet-volume 9\n");
  EXPECT_NE(error_of([&] { load_scalar_volume(dir / "x.vol"); }).find("version"), std::string::npos);
}

TEST(VolumeFile, RefusesEmptyVolume) {
  const auto dir = fixture::temp_dir("vol");
  EXPECT_THROW(save_volume(ScalarVolume(Dims3{0, 4, 4}), dir / "e.vol"), ShapeError);
}

TEST(VolumeFile, DumpTensorChannel) {
  const auto dir = fixture::temp_dir("vol");
  const auto t = fixture::random_tensor({1, 3, 2, 2, 2}, 9);
  dump_tensor(t, 0, 2, dir / "c2.vol");
  const auto v = load_scalar_volume(dir / "c2.vol");
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(v.data[i], static_cast<float>(t.data[16 + i]));
  EXPECT_THROW(dump_tensor(t, 0, 3, dir / "c3.vol"), ShapeError);
}

TEST(Nifti, Float32FixtureExact) {
  const auto dir = fixture::temp_dir("nii");
  NiftiBuilder b;
  const std::vector<float> vals{0.5f, -1.0f, 2.25f, 3.0f, 1e-7f, -8.5f, 100.0f, 7.0f};
  b.payload = pack(vals);
  write_all(dir / "a.nii", b.bytes());
  std::vector<std::string> notices;
  const auto v = import_nifti(dir / "a.nii", &notices);
  EXPECT_EQ(v.dims, (Dims3{2, 2, 2}));
  EXPECT_EQ(v.data, vals);
  EXPECT_EQ(v.spacing, (Spacing{2.0, 0.75, 0.5}));
  EXPECT_FALSE(notices.empty());
}

TEST(Nifti, NonCubicAxisOrder) {
  const auto dir = fixture::temp_dir("nii");
  NiftiBuilder b;
  b.dim[1] = 3;  // x
  b.dim[2] = 2;  // y
  b.dim[3] = 1;  // z
  std::vector<float> vals(6);
  for (std::size_t i = 0; i < 6; ++i) vals[i] = static_cast<float>(i);
  b.payload = pack(vals);
  write_all(dir / "a.nii", b.bytes());
  const auto v = import_nifti(dir / "a.nii");
  EXPECT_EQ(v.dims, (Dims3{1, 2, 3}));
  EXPECT_EQ(v(0, 1, 0), 3.0f);
  EXPECT_EQ(v(0, 0, 2), 2.0f);
}

TEST(Nifti, Int16PreservesIntegers) {
  const auto dir = fixture::temp_dir("nii");
  NiftiBuilder b;
  b.datatype = 4;
  const std::vector<std::int16_t> vals{-32768, -1, 0, 1, 255, 1024, 32767, -300};
  b.payload = pack(vals);
  write_all(dir / "i.nii", b.bytes());
  const auto v = import_nifti(dir / "i.nii");
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(v.data[i], static_cast<float>(vals[i]));
}

TEST(Nifti, UInt8) {
  const auto dir = fixture::temp_dir("nii");
  NiftiBuilder b;
  b.datatype = 2;
  b.payload = std::string("\x00\x01\x02\x04\xff\x10\x20\x30", 8);
  write_all(dir / "u.nii", b.bytes());
  const auto v = import_nifti(dir / "u.nii");
  EXPECT_EQ(v.data[4], 255.0f);
  EXPECT_EQ(v.data[3], 4.0f);
}

TEST(Nifti, DistinctRejections) {
  const auto dir = fixture::temp_dir("nii");
  NiftiBuilder b;
  b.payload = pack(std::vector<float>(8, 1.0f));

  NiftiBuilder bad_magic = b;
  bad_magic.magic = "ni1";
  write_all(dir / "m.nii", bad_magic.bytes());
  EXPECT_NE(error_of([&] { import_nifti(dir / "m.nii"); }).find("magic"), std::string::npos);

  NiftiBuilder bad_type = b;
  bad_type.datatype = 64;
  write_all(dir / "t.nii", bad_type.bytes());
  EXPECT_NE(error_of([&] { import_nifti(dir / "t.nii"); }).find("unsupported NIfTI datatype"), std::string::npos);

  write_all(dir / "z.nii.gz", std::string("\x1f\x8b\x08\x00", 4) + std::string(400, 'x'));
  EXPECT_NE(error_of([&] { import_nifti(dir / "z.nii.gz"); }).find("compressed"), std::string::npos);

  auto trunc = b.bytes();
  trunc.resize(trunc.size() - 4);
  write_all(dir / "s.nii", trunc);
  EXPECT_NE(error_of([&] { import_nifti(dir / "s.nii"); }).find("truncated"), std::string::npos);

  NiftiBuilder four_d = b;
  four_d.dim[0] = 4;
  four_d.dim[4] = 2;
  write_all(dir / "4.nii", four_d.bytes());
  EXPECT_THROW(import_nifti(dir / "4.nii"), FormatError);
}

TEST(Nifti, ScalingNotice) {
  const auto dir = fixture::temp_dir("nii");
  NiftiBuilder b;
  b.scl_slope = 2.0f;
  b.payload = pack(std::vector<float>(8, 1.0f));
  write_all(dir / "s.nii", b.bytes());
  std::vector<std::string> notices;
  const auto v = import_nifti(dir / "s.nii", &notices);
  EXPECT_EQ(v.data[0], 1.0f);
  EXPECT_EQ(notices.front(), "scl_slope/scl_inter ignored");
}
