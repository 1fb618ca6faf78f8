#pragma once

// Shape sketching: ligand-derived shapes, and pocket-complementary shapes
// sampled as the intersection of a posed seed shape with the pocket cavity.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "desert/chem.hpp"
#include "desert/common.hpp"
#include "desert/geom.hpp"

namespace desert {

struct PocketShape {
    VoxelGrid grid;  // 1 = open cavity space a ligand may occupy
};

enum class SeedKind { Sphere, Ellipsoid, LigandDerived };

struct SeedShape {
    SeedKind kind = SeedKind::Sphere;
    Vec3 radii;             // sphere: radii.x; ellipsoid: semi-axes
    Quaternion rotation;    // ellipsoid / ligand orientation
    Vec3 center;
    const Molecule* ligand = nullptr;  // LigandDerived source
};

struct SketchParams {
    double v_min = 250.0;   // intersection volume band, Angstrom^3
    double v_max = 500.0;
    int n_shapes = 1;
    int max_attempts = 200; // per shape
    std::uint64_t seed = 0;
    bool enable_sphere = true;
    bool enable_ellipsoid = true;
    bool enable_ligand = false;
    std::vector<Molecule> library;  // for ligand-derived seeds
};

inline VoxelGrid sketch_from_ligand(const Molecule& ligand, const GridSpec& spec) {
    return voxelize(ligand, spec, 0.0, nullptr);
}

namespace detail {

// cavity cells with at least one 6-neighbor that is non-cavity (or outside)
inline std::vector<std::array<int, 3>> boundary_cells(const VoxelGrid& g) {
    static const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<std::array<int, 3>> out;
    int e = g.extent();
    for (int z = 0; z < e; ++z)
        for (int y = 0; y < e; ++y)
            for (int x = 0; x < e; ++x) {
                if (!g.at(x, y, z)) continue;
                for (auto& d : nb) {
                    int nx = x + d[0], ny = y + d[1], nz = z + d[2];
                    if (!g.in_bounds(nx, ny, nz) || !g.at(nx, ny, nz)) {
                        out.push_back({x, y, z});
                        break;
                    }
                }
            }
    return out;
}

// outward normal estimate at a boundary cell: mean direction toward
// non-cavity 6-neighbors
inline Vec3 boundary_normal(const VoxelGrid& g, int x, int y, int z) {
    static const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    Vec3 n;
    for (auto& d : nb) {
        int nx = x + d[0], ny = y + d[1], nz = z + d[2];
        if (!g.in_bounds(nx, ny, nz) || !g.at(nx, ny, nz))
            n += Vec3{static_cast<double>(d[0]), static_cast<double>(d[1]),
                      static_cast<double>(d[2])};
    }
    double len = n.norm();
    return len > 1e-9 ? n / len : Vec3{1, 0, 0};
}

inline VoxelGrid rasterize_seed(const SeedShape& seed, const GridSpec& spec) {
    if (seed.kind == SeedKind::LigandDerived) {
        // voxelize the source molecule translated to the seed center, then
        // dilate by one voxel
        Molecule moved = *seed.ligand;
        Vec3 c = moved.centroid();
        for (Atom& a : moved.atoms) {
            a.position = seed.rotation.rotate(a.position - c) + seed.center;
        }
        VoxelGrid base(spec);
        // clip atoms whose spheres would leave the grid rather than failing
        std::vector<Vec3> centers;
        std::vector<double> radii;
        Vec3 lo = spec.origin;
        Vec3 hi = spec.origin + Vec3{1, 1, 1} * (spec.extent * spec.pitch);
        for (const Atom& a : moved.atoms) {
            double r = vdw_radius(a.element);
            if (a.position.x - r < lo.x || a.position.y - r < lo.y || a.position.z - r < lo.z ||
                a.position.x + r > hi.x || a.position.y + r > hi.y || a.position.z + r > hi.z)
                continue;
            centers.push_back(a.position);
            radii.push_back(r);
        }
        base = voxelize_spheres(centers, radii, spec);
        VoxelGrid dilated(spec);
        static const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        int e = spec.extent;
        for (int z = 0; z < e; ++z)
            for (int y = 0; y < e; ++y)
                for (int x = 0; x < e; ++x) {
                    if (base.at(x, y, z)) {
                        dilated.set(x, y, z, true);
                        continue;
                    }
                    for (auto& d : nb) {
                        int nx = x + d[0], ny = y + d[1], nz = z + d[2];
                        if (base.in_bounds(nx, ny, nz) && base.at(nx, ny, nz)) {
                            dilated.set(x, y, z, true);
                            break;
                        }
                    }
                }
        return dilated;
    }
    // sphere / ellipsoid: |D R^T (p - c)| <= 1 with D = diag(1/radii)
    VoxelGrid grid(spec);
    double rmax = std::max({seed.radii.x, seed.radii.y, seed.radii.z});
    Quaternion inv = seed.rotation.conjugate();
    int e = spec.extent;
    for (int z = 0; z < e; ++z)
        for (int y = 0; y < e; ++y)
            for (int x = 0; x < e; ++x) {
                Vec3 p = spec.cell_center(x, y, z) - seed.center;
                if (p.squared_norm() > rmax * rmax) continue;
                Vec3 q = inv.rotate(p);
                double rx = seed.kind == SeedKind::Sphere ? seed.radii.x : seed.radii.x;
                double ry = seed.kind == SeedKind::Sphere ? seed.radii.x : seed.radii.y;
                double rz = seed.kind == SeedKind::Sphere ? seed.radii.x : seed.radii.z;
                double v = (q.x / rx) * (q.x / rx) + (q.y / ry) * (q.y / ry) + (q.z / rz) * (q.z / rz);
                if (v <= 1.0) grid.set(x, y, z, true);
            }
    return grid;
}

// largest... no: check single 6-connected component over occupied cells
inline bool is_six_connected(const VoxelGrid& g) {
    std::size_t total = g.occupied_count();
    if (total == 0) return false;
    int e = g.extent();
    std::vector<std::uint8_t> seen(g.cells().size(), 0);
    std::array<int, 3> start{-1, -1, -1};
    for (int z = 0; z < e && start[0] < 0; ++z)
        for (int y = 0; y < e && start[0] < 0; ++y)
            for (int x = 0; x < e && start[0] < 0; ++x)
                if (g.at(x, y, z)) start = {x, y, z};
    std::vector<std::array<int, 3>> stack{start};
    seen[g.index(start[0], start[1], start[2])] = 1;
    std::size_t count = 0;
    static const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    while (!stack.empty()) {
        auto [x, y, z] = stack.back();
        stack.pop_back();
        ++count;
        for (auto& d : nb) {
            int nx = x + d[0], ny = y + d[1], nz = z + d[2];
            if (!g.in_bounds(nx, ny, nz) || !g.at(nx, ny, nz)) continue;
            std::size_t idx = g.index(nx, ny, nz);
            if (!seen[idx]) {
                seen[idx] = 1;
                stack.push_back({nx, ny, nz});
            }
        }
    }
    return count == total;
}

} // namespace detail

// Samples a seed shape: kind uniform over enabled kinds; sphere radius
// U[4, 8] A; ellipsoid semi-axes U[3, 8] A with a random rotation; ligand-
// derived picks a library molecule. The center sits on a uniformly chosen
// cavity-boundary cell, pushed outward along the local normal by U[0, r].
inline SeedShape sample_seed_shape(RandomSource& rng, const PocketShape& pocket,
                                   const std::vector<Molecule>* library = nullptr) {
    std::vector<SeedKind> kinds;
    kinds.push_back(SeedKind::Sphere);
    kinds.push_back(SeedKind::Ellipsoid);
    if (library != nullptr) {
        if (library->empty()) throw Error("empty-library", "ligand-derived seeds need a library");
        kinds.push_back(SeedKind::LigandDerived);
    }
    SeedShape seed;
    seed.kind = kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kinds.size()) - 1))];
    double reach = 0;
    switch (seed.kind) {
        case SeedKind::Sphere: {
            double r = rng.uniform(4.0, 8.0);
            seed.radii = {r, r, r};
            seed.rotation = Quaternion::identity();
            reach = r;
            break;
        }
        case SeedKind::Ellipsoid:
            seed.radii = {rng.uniform(3.0, 8.0), rng.uniform(3.0, 8.0), rng.uniform(3.0, 8.0)};
            seed.rotation = Quaternion::random_uniform(rng);
            reach = std::max({seed.radii.x, seed.radii.y, seed.radii.z});
            break;
        case SeedKind::LigandDerived: {
            std::size_t pick = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(library->size()) - 1));
            seed.ligand = &(*library)[pick];
            seed.rotation = Quaternion::random_uniform(rng);
            Vec3 c = seed.ligand->centroid();
            for (const Atom& a : seed.ligand->atoms)
                reach = std::max(reach, distance(a.position, c));
            reach = std::max(reach, 4.0);
            break;
        }
    }
    auto boundary = detail::boundary_cells(pocket.grid);
    if (boundary.empty()) throw Error("empty-pocket", "pocket cavity has no boundary cells");
    auto cell = boundary[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(boundary.size()) - 1))];
    Vec3 base = pocket.grid.spec().cell_center(cell[0], cell[1], cell[2]);
    Vec3 normal = detail::boundary_normal(pocket.grid, cell[0], cell[1], cell[2]);
    seed.center = base + normal * rng.uniform(0.0, reach);
    return seed;
}

struct SketchedShape {
    VoxelGrid grid;
    SeedKind seed_kind = SeedKind::Sphere;
    double volume = 0.0;
    int attempts = 0;
};

struct SketchResult {
    std::vector<SketchedShape> shapes;
    int failed_shapes = 0;  // shapes not produced within max_attempts
};

// Accepts an intersection iff its volume lies in [v_min, v_max], it is a
// single 6-connected component, and it touches the cavity boundary.
inline SketchResult sketch_from_pocket(const PocketShape& pocket, const SketchParams& params) {
    if (pocket.grid.occupied_count() == 0)
        throw Error("empty-pocket", "pocket cavity is empty");
    if (!(params.v_min > 0 && params.v_min < params.v_max) || params.n_shapes < 1)
        throw Error("bad-params", "require 0 < v_min < v_max and n_shapes >= 1");
    const GridSpec& spec = pocket.grid.spec();
    double cell_vol = spec.pitch * spec.pitch * spec.pitch;

    // boundary membership mask for the contact test
    std::vector<std::uint8_t> is_boundary(pocket.grid.cells().size(), 0);
    for (auto& c : detail::boundary_cells(pocket.grid))
        is_boundary[pocket.grid.index(c[0], c[1], c[2])] = 1;

    RandomSource master(params.seed);
    SketchResult result;
    for (int shape_i = 0; shape_i < params.n_shapes; ++shape_i) {
        RandomSource rng = master.split(static_cast<std::uint64_t>(shape_i));
        bool accepted = false;
        for (int attempt = 1; attempt <= params.max_attempts; ++attempt) {
            SeedShape seed = sample_seed_shape(
                rng, pocket, params.enable_ligand ? &params.library : nullptr);
            if ((seed.kind == SeedKind::Sphere && !params.enable_sphere) ||
                (seed.kind == SeedKind::Ellipsoid && !params.enable_ellipsoid))
                continue;
            VoxelGrid seed_grid = detail::rasterize_seed(seed, spec);
            VoxelGrid inter(spec);
            auto& ic = inter.cells();
            const auto& pc = pocket.grid.cells();
            const auto& sc = seed_grid.cells();
            bool touches = false;
            std::size_t occ = 0;
            for (std::size_t i = 0; i < ic.size(); ++i) {
                ic[i] = pc[i] & sc[i];
                occ += ic[i];
                if (ic[i] && is_boundary[i]) touches = true;
            }
            double vol = static_cast<double>(occ) * cell_vol;
            if (vol < params.v_min || vol > params.v_max) continue;
            if (!touches) continue;
            if (!detail::is_six_connected(inter)) continue;
            result.shapes.push_back({std::move(inter), seed.kind, vol, attempt});
            accepted = true;
            break;
        }
        if (!accepted) ++result.failed_shapes;
    }
    return result;
}

// Pocket ingestion from an atom list: the cavity is the complement of atom
// occupancy within the grid box.
inline PocketShape pocket_from_atoms(const Molecule& protein, const GridSpec& spec) {
    VoxelGrid occ;
    {
        std::vector<Vec3> centers;
        std::vector<double> radii;
        Vec3 lo = spec.origin;
        Vec3 hi = spec.origin + Vec3{1, 1, 1} * (spec.extent * spec.pitch);
        for (const Atom& a : protein.atoms) {
            double r = known_element(a.element) ? vdw_radius(a.element) : 1.7;
            // atoms straddling the box edge are clipped, not rejected
            if (a.position.x + r < lo.x || a.position.y + r < lo.y || a.position.z + r < lo.z ||
                a.position.x - r > hi.x || a.position.y - r > hi.y || a.position.z - r > hi.z)
                continue;
            centers.push_back(a.position);
            radii.push_back(r);
        }
        // clamp spheres into the box by rasterizing manually
        VoxelGrid grid(spec);
        for (std::size_t i = 0; i < centers.size(); ++i) {
            const Vec3& c = centers[i];
            double r = radii[i];
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
        occ = std::move(grid);
    }
    PocketShape pocket{VoxelGrid(spec)};
    auto& pcells = pocket.grid.cells();
    const auto& ocells = occ.cells();
    for (std::size_t i = 0; i < pcells.size(); ++i) pcells[i] = ocells[i] ? 0 : 1;
    return pocket;
}

} // namespace desert
