#include "cvnet/morphology.hpp"

#include <algorithm>
#include <numeric>

#include "cvnet/error.hpp"

namespace cvnet {

namespace {

// Union-find over provisional labels.
struct DisjointSet {
  std::vector<std::uint32_t> parent;

  std::uint32_t make() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Keep the smaller root so roots stay ordered by first appearance.
    if (a < b) {
      parent[b] = a;
    } else {
      parent[a] = b;
    }
  }
};

struct Offset {
  int dz, dy, dx;
};

// Neighbors that precede a voxel in scan order.
std::vector<Offset> backward_neighbors(Connectivity c) {
  std::vector<Offset> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int nonzero = (dz != 0) + (dy != 0) + (dx != 0);
        if (c == Connectivity::Face6 && nonzero > 1) continue;
        if (c == Connectivity::Edge18 && nonzero > 2) continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

}  // namespace

ComponentLabeling connected_components(const MaskVolume& mask, Connectivity connectivity) {
  const Dims3 d = mask.dims;
  ComponentLabeling out;
  out.dims = d;
  out.labels.assign(d.size(), 0);
  const auto neighbors = backward_neighbors(connectivity);
  DisjointSet sets;
  sets.make();  // slot 0 is background
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const std::size_t i = mask.index(z, y, x);
        if (!mask.data[i]) continue;
        std::uint32_t label = 0;
        for (const auto& o : neighbors) {
          const long nz = long(z) + o.dz, ny = long(y) + o.dy, nx = long(x) + o.dx;
          if (nz < 0 || ny < 0 || nx < 0 || ny >= long(d.h) || nx >= long(d.w)) continue;
          const std::uint32_t nl = out.labels[mask.index(nz, ny, nx)];
          if (!nl) continue;
          if (!label) {
            label = nl;
          } else {
            sets.unite(label, nl);
          }
        }
        out.labels[i] = label ? label : sets.make();
      }
  // Provisional labels are created in scan order, so resolving roots in
  // increasing order reproduces first-voxel id assignment.
  std::vector<std::uint32_t> final_id(sets.parent.size(), 0);
  std::uint32_t next = 0;
  for (std::uint32_t l = 1; l < sets.parent.size(); ++l) {
    const std::uint32_t r = sets.find(l);
    if (!final_id[r]) final_id[r] = ++next;
    final_id[l] = final_id[r];
  }
  out.sizes.assign(next, 0);
  for (auto& l : out.labels) {
    if (!l) continue;
    l = final_id[l];
    ++out.sizes[l - 1];
  }
  return out;
}

std::string to_string(const FilterPolicy& policy) {
  if (const auto* m = std::get_if<MinVoxels>(&policy)) return "min_voxels:" + std::to_string(m->k);
  return "keep_largest";
}

FilterPolicy parse_filter_policy(const std::string& text) {
  if (text == "keep_largest") return KeepLargest{};
  const std::string prefix = "min_voxels:";
  if (text.rfind(prefix, 0) == 0) {
    try {
      return MinVoxels{static_cast<std::size_t>(std::stoul(text.substr(prefix.size())))};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown filter policy '" + text + "' (expected keep_largest or min_voxels:<k>)");
}

MaskVolume filter_small_components(const ComponentLabeling& labeling, const FilterPolicy& policy) {
  MaskVolume out(labeling.dims, 0);
  std::vector<bool> keep(labeling.count() + 1, false);
  if (const auto* m = std::get_if<MinVoxels>(&policy)) {
    for (std::size_t id = 1; id <= labeling.count(); ++id) keep[id] = labeling.sizes[id - 1] >= m->k;
  } else if (labeling.count() > 0) {
    const auto it = std::max_element(labeling.sizes.begin(), labeling.sizes.end());
    keep[static_cast<std::size_t>(it - labeling.sizes.begin()) + 1] = true;
  }
  for (std::size_t i = 0; i < labeling.labels.size(); ++i) {
    if (keep[labeling.labels[i]]) out.data[i] = 1;
  }
  return out;
}

std::optional<Box3D> bounding_box(const MaskVolume& mask, std::size_t margin) {
  const Dims3 d = mask.dims;
  Box3D box{{d.d, d.h, d.w}, {0, 0, 0}};
  bool found = false;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        if (!mask(z, y, x)) continue;
        found = true;
        const std::array<std::size_t, 3> p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          box.min_corner[a] = std::min(box.min_corner[a], p[a]);
          box.max_corner[a] = std::max(box.max_corner[a], p[a]);
        }
      }
  if (!found) return std::nullopt;
  for (int a = 0; a < 3; ++a) {
    box.min_corner[a] = box.min_corner[a] >= margin ? box.min_corner[a] - margin : 0;
    box.max_corner[a] = std::min(box.max_corner[a] + margin, d[a] - 1);
  }
  return box;
}

MaskVolume rasterize(const Box3D& box, const MaskVolume& like) {
  MaskVolume out = make_mask_like(like, 0);
  for (std::size_t z = box.min_corner[0]; z <= box.max_corner[0]; ++z)
    for (std::size_t y = box.min_corner[1]; y <= box.max_corner[1]; ++y)
      for (std::size_t x = box.min_corner[2]; x <= box.max_corner[2]; ++x) out(z, y, x) = 1;
  return out;
}

MaskVolume gt_tumor_box(const LabelVolume& labels, std::size_t margin) {
  MaskVolume tumor = make_mask_like(labels, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = labels.data[i];
    tumor.data[i] = (v == 1 || v == 2 || v == 4) ? 1 : 0;
  }
  const auto box = bounding_box(tumor, margin);
  if (!box) throw ConfigError("gt_tumor_box: label volume contains no tumor");
  return rasterize(*box, tumor);
}

MaskVolume brain_mask(const MultiModalScan& scan) {
  MaskVolume out = make_mask_like(scan.modalities[0], 0);
  for (const auto& m : scan.modalities) {
    if (m.dims != out.dims) throw ShapeError("brain_mask: modalities differ in dims");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m.data[i] != 0.0f) out.data[i] = 1;
    }
  }
  return out;
}

}  // namespace cvnet
