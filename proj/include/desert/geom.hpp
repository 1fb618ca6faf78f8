#pragma once

// 3D vector/quaternion math, molecular voxelization, patch extraction and
// shape comparison.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "desert/common.hpp"

namespace desert {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    double squared_norm() const { return dot(*this); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0 ? *this / n : Vec3{0, 0, 0};
    }
    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Quaternion() = default;
    Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quaternion identity() { return {1, 0, 0, 0}; }

    static Quaternion from_axis_angle(const Vec3& axis, double angle) {
        Vec3 u = axis.normalized();
        double h = angle / 2;
        double s = std::sin(h);
        return {std::cos(h), u.x * s, u.y * s, u.z * s};
    }

    // Shoemake's method: uniform on SO(3).
    static Quaternion random_uniform(RandomSource& rng) {
        double u1 = rng.uniform(0, 1), u2 = rng.uniform(0, 1), u3 = rng.uniform(0, 1);
        double a = std::sqrt(1 - u1), b = std::sqrt(u1);
        constexpr double tau = 2 * 3.14159265358979323846;
        return {a * std::sin(tau * u2), a * std::cos(tau * u2),
                b * std::sin(tau * u3), b * std::cos(tau * u3)};
    }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quaternion normalized() const {
        double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    Quaternion conjugate() const { return {w, -x, -y, -z}; }

    Quaternion operator*(const Quaternion& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    Vec3 rotate(const Vec3& v) const {
        // q v q* expanded; assumes unit norm.
        Vec3 u{x, y, z};
        Vec3 t = 2.0 * u.cross(v);
        return v + w * t + u.cross(t);
    }

    bool is_unit(double tol = 1e-6) const { return std::abs(norm() - 1.0) <= tol; }

    // q and -q encode the same rotation; pick the representative with w >= 0,
    // breaking the w == 0 tie by the first nonzero component.
    Quaternion canonicalized() const {
        const double* c[4] = {&w, &x, &y, &z};
        for (const double* v : c) {
            if (*v > 0) return *this;
            if (*v < 0) return {-w, -x, -y, -z};
        }
        return *this;
    }

    double angle_to(const Quaternion& o) const {
        double d = std::abs(w * o.w + x * o.x + y * o.y + z * o.z);
        return 2 * std::acos(std::min(1.0, d));
    }
};

struct GridSpec {
    double pitch = 0.5;    // voxel edge, Angstrom
    int extent = 64;       // voxels per axis (cubic)
    Vec3 origin;           // minimum corner

    bool operator==(const GridSpec& o) const {
        return pitch == o.pitch && extent == o.extent && origin.x == o.origin.x &&
               origin.y == o.origin.y && origin.z == o.origin.z;
    }

    Vec3 cell_center(int ix, int iy, int iz) const {
        return {origin.x + (ix + 0.5) * pitch,
                origin.y + (iy + 0.5) * pitch,
                origin.z + (iz + 0.5) * pitch};
    }

    // Grid of the given extent/pitch centered on a point.
    static GridSpec centered(const Vec3& center, double pitch, int extent) {
        double half = extent * pitch / 2;
        return {pitch, extent, {center.x - half, center.y - half, center.z - half}};
    }
};

class VoxelGrid {
public:
    VoxelGrid() : spec_{}, cells_(static_cast<std::size_t>(spec_.extent) * spec_.extent * spec_.extent, 0) {}

    explicit VoxelGrid(const GridSpec& spec)
        : spec_(spec),
          cells_(static_cast<std::size_t>(spec.extent) * spec.extent * spec.extent, 0) {
        if (spec.pitch <= 0 || spec.extent < 1)
            throw Error("bad-grid-spec", "pitch must be > 0 and extent >= 1");
    }

    const GridSpec& spec() const { return spec_; }
    int extent() const { return spec_.extent; }

    // raster order: x fastest, then y, then z
    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(iz) * spec_.extent + iy) * spec_.extent + ix;
    }

    bool in_bounds(int ix, int iy, int iz) const {
        return ix >= 0 && iy >= 0 && iz >= 0 && ix < spec_.extent && iy < spec_.extent &&
               iz < spec_.extent;
    }

    std::uint8_t at(int ix, int iy, int iz) const { return cells_[index(ix, iy, iz)]; }
    void set(int ix, int iy, int iz, bool v) { cells_[index(ix, iy, iz)] = v ? 1 : 0; }

    const std::vector<std::uint8_t>& cells() const { return cells_; }
    std::vector<std::uint8_t>& cells() { return cells_; }

    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (auto c : cells_) n += c;
        return n;
    }

    double volume() const {
        return static_cast<double>(occupied_count()) * spec_.pitch * spec_.pitch * spec_.pitch;
    }

    bool operator==(const VoxelGrid& o) const {
        return spec_ == o.spec_ && cells_ == o.cells_;
    }

private:
    GridSpec spec_;
    std::vector<std::uint8_t> cells_;
};

// Bondi (1964) van der Waals radii, Angstrom.
inline double vdw_radius(const std::string& element) {
    static const std::unordered_map<std::string, double> table = {
        {"H", 1.20}, {"C", 1.70}, {"N", 1.55}, {"O", 1.52}, {"F", 1.47},
        {"P", 1.80}, {"S", 1.80}, {"Cl", 1.75}, {"Br", 1.85}, {"I", 1.98},
        {"He", 1.40}, {"Ne", 1.54}, {"Ar", 1.88}, {"Si", 2.10}, {"B", 1.92},
    };
    auto it = table.find(element);
    if (it == table.end())
        throw Error("unknown-element", "no van der Waals radius for element '" + element + "'");
    return it->second;
}

inline bool known_element(const std::string& element) {
    try {
        vdw_radius(element);
        return true;
    } catch (const Error&) {
        return false;
    }
}

// Occupancy of a set of spheres (atom positions + per-atom radius) on a grid.
// eps: a single perturbation drawn once per call from U[-eps, +eps] when rng
// is given, 0 otherwise. Cell membership is tested at cell centers.
inline VoxelGrid voxelize_spheres(const std::vector<Vec3>& centers,
                                  const std::vector<double>& radii,
                                  const GridSpec& spec, double eps = 0.0,
                                  RandomSource* rng = nullptr) {
    VoxelGrid grid(spec);
    double noise = (rng != nullptr && eps != 0.0) ? rng->uniform(-eps, eps) : 0.0;
    double eps_max = std::abs(eps);
    Vec3 lo = spec.origin;
    Vec3 hi = spec.origin + Vec3{1, 1, 1} * (spec.extent * spec.pitch);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        const Vec3& c = centers[i];
        double r_max = radii[i] + eps_max;
        if (c.x - r_max < lo.x || c.y - r_max < lo.y || c.z - r_max < lo.z ||
            c.x + r_max > hi.x || c.y + r_max > hi.y || c.z + r_max > hi.z) {
            std::ostringstream msg;
            msg << "atom " << i << " sphere (r=" << r_max << ") extends outside the grid";
            throw Error("out-of-bounds", msg.str());
        }
        double r = radii[i] + noise;
        if (r <= 0) continue;
        int ix0 = std::max(0, static_cast<int>(std::floor((c.x - r - spec.origin.x) / spec.pitch)));
        int iy0 = std::max(0, static_cast<int>(std::floor((c.y - r - spec.origin.y) / spec.pitch)));
        int iz0 = std::max(0, static_cast<int>(std::floor((c.z - r - spec.origin.z) / spec.pitch)));
        int ix1 = std::min(spec.extent - 1, static_cast<int>(std::floor((c.x + r - spec.origin.x) / spec.pitch)));
        int iy1 = std::min(spec.extent - 1, static_cast<int>(std::floor((c.y + r - spec.origin.y) / spec.pitch)));
        int iz1 = std::min(spec.extent - 1, static_cast<int>(std::floor((c.z + r - spec.origin.z) / spec.pitch)));
        double r2 = r * r;
        for (int iz = iz0; iz <= iz1; ++iz)
            for (int iy = iy0; iy <= iy1; ++iy)
                for (int ix = ix0; ix <= ix1; ++ix)
                    if ((spec.cell_center(ix, iy, iz) - c).squared_norm() <= r2)
                        grid.set(ix, iy, iz, true);
    }
    return grid;
}

inline double shape_tanimoto(const VoxelGrid& a, const VoxelGrid& b) {
    if (!(a.spec() == b.spec()))
        throw Error("spec-mismatch", "shape_tanimoto requires identical grid specs");
    std::size_t inter = 0, uni = 0;
    const auto& ca = a.cells();
    const auto& cb = b.cells();
    for (std::size_t i = 0; i < ca.size(); ++i) {
        inter += ca[i] & cb[i];
        uni += ca[i] | cb[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<Vec3> apply_rigid(const std::vector<Vec3>& points,
                                     const Quaternion& rotation, const Vec3& translation) {
    if (!rotation.is_unit())
        throw Error("invalid-rotation", "rotation quaternion is not unit-norm");
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const Vec3& p : points) out.push_back(rotation.rotate(p) + translation);
    return out;
}

struct Patch {
    std::vector<std::uint8_t> cells;  // patch_edge^3 values, x fastest
    int px = 0, py = 0, pz = 0;       // lattice position of the patch
};

// Non-overlapping cubic patches in fixed raster order: z-major, then y, then x.
inline std::vector<Patch> extract_patches(const VoxelGrid& grid, int patch_edge) {
    int extent = grid.extent();
    if (patch_edge < 1 || extent % patch_edge != 0)
        throw Error("patching-error", "grid extent must be divisible by patch_edge");
    int n = extent / patch_edge;
    std::vector<Patch> patches;
    patches.reserve(static_cast<std::size_t>(n) * n * n);
    for (int pz = 0; pz < n; ++pz)
        for (int py = 0; py < n; ++py)
            for (int px = 0; px < n; ++px) {
                Patch p;
                p.px = px; p.py = py; p.pz = pz;
                p.cells.reserve(static_cast<std::size_t>(patch_edge) * patch_edge * patch_edge);
                for (int z = 0; z < patch_edge; ++z)
                    for (int y = 0; y < patch_edge; ++y)
                        for (int x = 0; x < patch_edge; ++x)
                            p.cells.push_back(grid.at(px * patch_edge + x,
                                                      py * patch_edge + y,
                                                      pz * patch_edge + z));
                patches.push_back(std::move(p));
            }
    return patches;
}

// VOXL text format:
//   VOXL <extent> <pitch> <ox> <oy> <oz>
//   <run-length> <bit>      (one record per line, raster order, x fastest)
inline void write_voxl(std::ostream& os, const VoxelGrid& grid) {
    const GridSpec& s = grid.spec();
    os << "VOXL " << s.extent << ' ' << s.pitch << ' ' << s.origin.x << ' ' << s.origin.y
       << ' ' << s.origin.z << '\n';
    const auto& cells = grid.cells();
    std::size_t i = 0;
    while (i < cells.size()) {
        std::size_t j = i;
        while (j < cells.size() && cells[j] == cells[i]) ++j;
        os << (j - i) << ' ' << static_cast<int>(cells[i]) << '\n';
        i = j;
    }
}

inline VoxelGrid read_voxl(std::istream& is) {
    std::string magic;
    GridSpec spec;
    if (!(is >> magic >> spec.extent >> spec.pitch >> spec.origin.x >> spec.origin.y >>
          spec.origin.z) ||
        magic != "VOXL")
        throw Error("voxl-parse", "malformed VOXL header");
    VoxelGrid grid(spec);
    auto& cells = grid.cells();
    std::size_t pos = 0;
    std::size_t run;
    int bit;
    while (pos < cells.size()) {
        if (!(is >> run >> bit) || (bit != 0 && bit != 1) || pos + run > cells.size())
            throw Error("voxl-parse", "malformed VOXL run-length record");
        std::fill(cells.begin() + pos, cells.begin() + pos + run, static_cast<std::uint8_t>(bit));
        pos += run;
    }
    return grid;
}

} // namespace desert
