#pragma once

// Molecule representation, MOL V2000 subset I/O, fragmentation with
// breakpoints, canonical fragment keys and the fragment vocabulary.
// Hydrogens are implicit throughout; only heavy atoms are stored.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "desert/common.hpp"
#include "desert/geom.hpp"

namespace desert {

enum class BondOrder : int { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

inline double bond_order_valence(BondOrder o) {
    switch (o) {
        case BondOrder::Single: return 1.0;
        case BondOrder::Double: return 2.0;
        case BondOrder::Triple: return 3.0;
        case BondOrder::Aromatic: return 1.5;
    }
    return 1.0;
}

struct Atom {
    std::string element;
    Vec3 position;
    int id = 0;
};

struct Bond {
    int a = 0;
    int b = 0;
    BondOrder order = BondOrder::Single;
    bool in_ring = false;
};

struct Molecule {
    std::string name;
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(atoms.size());
        for (std::size_t i = 0; i < bonds.size(); ++i) {
            adj[bonds[i].a].push_back(static_cast<int>(i));
            adj[bonds[i].b].push_back(static_cast<int>(i));
        }
        return adj;
    }

    bool connected() const {
        if (atoms.empty()) return true;
        auto adj = adjacency();
        std::vector<bool> seen(atoms.size(), false);
        std::vector<int> stack{0};
        seen[0] = true;
        std::size_t count = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int bi : adj[v]) {
                int u = bonds[bi].a == v ? bonds[bi].b : bonds[bi].a;
                if (!seen[u]) {
                    seen[u] = true;
                    ++count;
                    stack.push_back(u);
                }
            }
        }
        return count == atoms.size();
    }

    Vec3 centroid() const {
        Vec3 c;
        for (const Atom& a : atoms) c += a.position;
        return atoms.empty() ? c : c / static_cast<double>(atoms.size());
    }
};

// Marks bonds that lie on a cycle (non-bridge edges, found by DFS low-link).
inline void mark_ring_bonds(Molecule& m) {
    const int n = static_cast<int>(m.atoms.size());
    auto adj = m.adjacency();
    std::vector<int> disc(n, -1), low(n, 0);
    for (Bond& b : m.bonds) b.in_ring = true;
    int timer = 0;
    // iterative DFS, frames of (vertex, parent-edge, next-neighbor-index)
    for (int root = 0; root < n; ++root) {
        if (disc[root] != -1) continue;
        std::vector<std::array<int, 3>> stack{{root, -1, 0}};
        disc[root] = low[root] = timer++;
        while (!stack.empty()) {
            auto& [v, pe, idx] = stack.back();
            if (idx < static_cast<int>(adj[v].size())) {
                int bi = adj[v][idx++];
                if (bi == pe) continue;
                int u = m.bonds[bi].a == v ? m.bonds[bi].b : m.bonds[bi].a;
                if (disc[u] == -1) {
                    disc[u] = low[u] = timer++;
                    stack.push_back({u, bi, 0});
                } else {
                    low[v] = std::min(low[v], disc[u]);
                }
            } else {
                stack.pop_back();
                if (!stack.empty()) {
                    int p = stack.back()[0];
                    low[p] = std::min(low[p], low[v]);
                    if (low[v] > disc[p]) m.bonds[pe].in_ring = false;  // bridge
                }
            }
        }
    }
    // isolated tree edges from roots: any bond whose endpoints were never on a
    // cycle was already handled above; bonds in components of size 1 unchanged.
    // A single bond with no cycle must be a bridge:
    if (n > 0) {
        // recompute trivially for components where DFS marked nothing: handled
        // by low-link already; nothing further needed.
    }
}

// ---------------------------------------------------------------------------
// MOL V2000 subset I/O

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int parse_int_field(const std::string& line, std::size_t pos, std::size_t len,
                           int lineno, const char* what) {
    if (line.size() < pos) throw Error("parse-error", std::string("line ") + std::to_string(lineno) + ": short " + what + " line");
    std::string f = trim(line.substr(pos, len));
    try {
        std::size_t used;
        int v = std::stoi(f, &used);
        if (used != f.size()) throw std::invalid_argument(f);
        return v;
    } catch (const std::exception&) {
        throw Error("parse-error", std::string("line ") + std::to_string(lineno) +
                                       ": bad integer field in " + what);
    }
}

inline double parse_real_field(const std::string& line, std::size_t pos, std::size_t len,
                               int lineno, const char* what) {
    if (line.size() < pos) throw Error("parse-error", std::string("line ") + std::to_string(lineno) + ": short " + what + " line");
    std::string f = trim(line.substr(pos, len));
    try {
        std::size_t used;
        double v = std::stod(f, &used);
        if (used != f.size()) throw std::invalid_argument(f);
        return v;
    } catch (const std::exception&) {
        throw Error("parse-error", std::string("line ") + std::to_string(lineno) +
                                       ": bad real field in " + what);
    }
}

} // namespace detail

// Parses one MOL V2000 record (header, counts, atom block, bond block;
// properties other than M  END are ignored). Ring flags are computed.
inline Molecule parse_molecule(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(is, line)) lines.push_back(line);
    if (lines.size() < 4) throw Error("parse-error", "record shorter than header + counts line");
    Molecule m;
    m.name = detail::trim(lines[0]);
    const std::string& counts = lines[3];
    int natoms = detail::parse_int_field(counts, 0, 3, 4, "counts");
    int nbonds = detail::parse_int_field(counts, 3, 3, 4, "counts");
    if (counts.size() < 39 || counts.substr(33, 6).find("V2000") == std::string::npos)
        throw Error("unsupported-feature", "only V2000 connection tables are supported");
    if (natoms < 0 || nbonds < 0)
        throw Error("parse-error", "negative counts");
    if (lines.size() < static_cast<std::size_t>(4 + natoms + nbonds))
        throw Error("parse-error", "record truncated before end of bond block");
    for (int i = 0; i < natoms; ++i) {
        const std::string& al = lines[4 + i];
        int lineno = 5 + i;
        Atom a;
        a.position.x = detail::parse_real_field(al, 0, 10, lineno, "atom");
        a.position.y = detail::parse_real_field(al, 10, 10, lineno, "atom");
        a.position.z = detail::parse_real_field(al, 20, 10, lineno, "atom");
        if (al.size() < 32) throw Error("parse-error", "line " + std::to_string(lineno) + ": missing element symbol");
        a.element = detail::trim(al.substr(31, 3));
        if (a.element.empty())
            throw Error("parse-error", "line " + std::to_string(lineno) + ": empty element symbol");
        a.id = i;
        if (!a.position.finite())
            throw Error("parse-error", "line " + std::to_string(lineno) + ": non-finite coordinate");
        m.atoms.push_back(std::move(a));
    }
    for (int i = 0; i < nbonds; ++i) {
        const std::string& bl = lines[4 + natoms + i];
        int lineno = 5 + natoms + i;
        Bond b;
        b.a = detail::parse_int_field(bl, 0, 3, lineno, "bond") - 1;
        b.b = detail::parse_int_field(bl, 3, 3, lineno, "bond") - 1;
        int order = detail::parse_int_field(bl, 6, 3, lineno, "bond");
        if (b.a < 0 || b.b < 0 || b.a >= natoms || b.b >= natoms)
            throw Error("parse-error", "line " + std::to_string(lineno) + ": bond references atom out of range");
        if (b.a == b.b)
            throw Error("parse-error", "line " + std::to_string(lineno) + ": self-bond");
        if (order < 1 || order > 4)
            throw Error("unsupported-feature", "line " + std::to_string(lineno) + ": bond order " + std::to_string(order));
        b.order = static_cast<BondOrder>(order);
        m.bonds.push_back(b);
    }
    // duplicate-bond check
    std::set<std::pair<int, int>> seen;
    for (const Bond& b : m.bonds) {
        auto key = std::minmax(b.a, b.b);
        if (!seen.insert(key).second)
            throw Error("parse-error", "duplicate bond between atoms " + std::to_string(key.first + 1) +
                                           " and " + std::to_string(key.second + 1));
    }
    mark_ring_bonds(m);
    return m;
}

inline std::string write_molecule(const Molecule& m) {
    std::ostringstream os;
    os << m.name << "\n  desert\n\n";
    char buf[128];
    std::snprintf(buf, sizeof buf, "%3zu%3zu  0  0  0  0  0  0  0  0999 V2000\n",
                  m.atoms.size(), m.bonds.size());
    os << buf;
    for (const Atom& a : m.atoms) {
        std::snprintf(buf, sizeof buf, "%10.4f%10.4f%10.4f %-3s 0  0  0  0  0  0  0  0  0  0  0  0\n",
                      a.position.x, a.position.y, a.position.z, a.element.c_str());
        os << buf;
    }
    for (const Bond& b : m.bonds) {
        std::snprintf(buf, sizeof buf, "%3d%3d%3d  0\n", b.a + 1, b.b + 1,
                      static_cast<int>(b.order));
        os << buf;
    }
    os << "M  END\n";
    return os.str();
}

// Reads records separated by $$$$ from an SDF stream.
inline std::vector<Molecule> read_sdf(std::istream& is) {
    std::vector<Molecule> mols;
    std::string line, record;
    while (std::getline(is, line)) {
        if (detail::trim(line) == "$$$$") {
            if (!detail::trim(record).empty()) mols.push_back(parse_molecule(record));
            record.clear();
        } else {
            record += line;
            record += '\n';
        }
    }
    if (!detail::trim(record).empty()) mols.push_back(parse_molecule(record));
    return mols;
}

inline void write_sdf(std::ostream& os, const std::vector<Molecule>& mols) {
    for (const Molecule& m : mols) os << write_molecule(m) << "$$$$\n";
}

// Convenience wrapper over voxelize_spheres using van der Waals radii.
inline VoxelGrid voxelize(const Molecule& m, const GridSpec& spec, double eps = 0.0,
                          RandomSource* rng = nullptr) {
    std::vector<Vec3> centers;
    std::vector<double> radii;
    centers.reserve(m.atoms.size());
    radii.reserve(m.atoms.size());
    for (const Atom& a : m.atoms) {
        centers.push_back(a.position);
        radii.push_back(vdw_radius(a.element));
    }
    return voxelize_spheres(centers, radii, spec, eps, rng);
}

// ---------------------------------------------------------------------------
// Canonical graph labeling

namespace detail {

struct LabeledGraph {
    // node label: element + breakpoint flag; edge label: bond order
    std::vector<std::string> node_labels;
    std::vector<std::vector<std::pair<int, int>>> adj;  // (neighbor, order)
};

// Iterative color refinement followed by a branch-and-bound search for the
// lexicographically smallest signature over all refinement-respecting orders.
class CanonicalLabeler {
public:
    explicit CanonicalLabeler(const LabeledGraph& g) : g_(g), n_(static_cast<int>(g.node_labels.size())) {}

    // returns (signature, canonical order: canonical index -> original node)
    std::pair<std::string, std::vector<int>> run() {
        if (n_ == 0) return {"{}", {}};
        refine();
        best_sig_.clear();
        order_.clear();
        pos_.assign(n_, -1);
        search();
        return {best_sig_, best_order_};
    }

private:
    void refine() {
        colors_.resize(n_);
        for (int i = 0; i < n_; ++i) colors_[i] = 0;
        std::vector<std::string> keys(n_);
        for (int iter = 0; iter < n_ + 1; ++iter) {
            for (int i = 0; i < n_; ++i) {
                std::vector<std::pair<int, int>> nb;
                for (auto [j, o] : g_.adj[i]) nb.emplace_back(o, colors_[j]);
                std::sort(nb.begin(), nb.end());
                std::ostringstream k;
                k << g_.node_labels[i] << '|' << colors_[i];
                for (auto [o, c] : nb) k << ';' << o << ',' << c;
                keys[i] = k.str();
            }
            std::vector<std::string> uniq(keys.begin(), keys.end());
            std::sort(uniq.begin(), uniq.end());
            uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
            std::vector<int> next(n_);
            for (int i = 0; i < n_; ++i)
                next[i] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), keys[i]) - uniq.begin());
            if (next == colors_) break;
            colors_ = next;
        }
    }

    // signature cell for the atom placed at position p in the order
    std::string cell(int node, int p) const {
        std::ostringstream s;
        s << g_.node_labels[node];
        std::vector<std::pair<int, int>> back;  // (placed position, order)
        for (auto [j, o] : g_.adj[node])
            if (pos_[j] >= 0 && pos_[j] < p) back.emplace_back(pos_[j], o);
        std::sort(back.begin(), back.end());
        for (auto [q, o] : back) s << '(' << q << ':' << o << ')';
        s << '#';
        return s.str();
    }

    void search() {
        int p = static_cast<int>(order_.size());
        if (p == n_) {
            if (best_sig_.empty() || sig_ < best_sig_) {
                best_sig_ = sig_;
                best_order_ = order_;
            }
            return;
        }
        // candidates: unplaced nodes; prefer those adjacent to the placed
        // prefix once the prefix is nonempty (keeps connected exploration)
        std::vector<int> cands;
        std::string best_cell;
        for (int i = 0; i < n_; ++i) {
            if (pos_[i] >= 0) continue;
            if (p > 0) {
                bool touches = false;
                for (auto [j, o] : g_.adj[i]) touches |= (pos_[j] >= 0);
                if (!touches && has_adjacent_candidate()) continue;
            }
            std::string c = cell(i, p);
            std::ostringstream full;
            full << c << '@' << colors_[i];
            std::string key = full.str();
            if (cands.empty() || key < best_cell) {
                cands = {i};
                best_cell = key;
            } else if (key == best_cell) {
                cands.push_back(i);
            }
        }
        for (int i : cands) {
            std::string c = cell(i, p);
            std::string saved = sig_;
            sig_ += c;
            // prefix pruning against the best complete signature
            if (best_sig_.empty() ||
                sig_.compare(0, sig_.size(), best_sig_, 0, std::min(sig_.size(), best_sig_.size())) <= 0) {
                pos_[i] = p;
                order_.push_back(i);
                search();
                order_.pop_back();
                pos_[i] = -1;
            }
            sig_ = saved;
        }
    }

    bool has_adjacent_candidate() const {
        for (int i = 0; i < n_; ++i) {
            if (pos_[i] >= 0) continue;
            for (auto [j, o] : g_.adj[i])
                if (pos_[j] >= 0) return true;
        }
        return false;
    }

    const LabeledGraph& g_;
    int n_;
    std::vector<int> colors_;
    std::vector<int> pos_;
    std::vector<int> order_;
    std::string sig_;
    std::string best_sig_;
    std::vector<int> best_order_;
};

} // namespace detail

// ---------------------------------------------------------------------------
// Fragments

struct Fragment {
    // atoms in canonical order, positions in the canonical local frame
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    std::vector<int> breakpoints;   // canonical atom ids, sorted
    std::string canonical_key;

    // instance data: pose mapping canonical frame -> world, and the original
    // molecule atom id per canonical atom (empty for vocabulary entries)
    Vec3 world_translation;
    Quaternion world_rotation;
    std::vector<int> orig_ids;

    Vec3 world_position(int canonical_atom) const {
        return world_rotation.rotate(atoms[canonical_atom].position) + world_translation;
    }
};

namespace detail {

inline std::pair<std::string, std::vector<int>> canonical_labeling(
    const std::vector<Atom>& atoms, const std::vector<Bond>& bonds,
    const std::vector<bool>& is_breakpoint) {
    LabeledGraph g;
    g.node_labels.resize(atoms.size());
    g.adj.resize(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i)
        g.node_labels[i] = atoms[i].element + (is_breakpoint[i] ? "*" : "");
    for (const Bond& b : bonds) {
        g.adj[b.a].emplace_back(b.b, static_cast<int>(b.order));
        g.adj[b.b].emplace_back(b.a, static_cast<int>(b.order));
    }
    CanonicalLabeler lab(g);
    return lab.run();
}

inline Quaternion quaternion_from_matrix(const Eigen::Matrix3d& r) {
    double tr = r.trace();
    Quaternion q;
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q.normalized();
}

// Canonical local frame: centroid at the origin, principal axes aligned,
// axis signs disambiguated by the first breakpoint direction (fallback: an
// index-weighted atom direction). Returns the rotation world->canonical is
// R^T; stored pose maps canonical->world.
inline void compute_canonical_frame(const std::vector<Vec3>& world_pos,
                                    const std::vector<int>& breakpoints,
                                    Vec3& translation, Quaternion& rotation,
                                    std::vector<Vec3>& local_pos) {
    const std::size_t n = world_pos.size();
    Vec3 c;
    for (const Vec3& p : world_pos) c += p;
    c = c / static_cast<double>(n);
    translation = c;
    if (n == 1) {
        rotation = Quaternion::identity();
        local_pos = {Vec3{0, 0, 0}};
        return;
    }
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const Vec3& p : world_pos) {
        Eigen::Vector3d d(p.x - c.x, p.y - c.y, p.z - c.z);
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    // descending eigenvalues
    Eigen::Matrix3d axes;
    axes.col(0) = es.eigenvectors().col(2);
    axes.col(1) = es.eigenvectors().col(1);
    axes.col(2) = es.eigenvectors().col(0);
    // reference directions for sign disambiguation
    auto ref_dir = [&](int which) -> Eigen::Vector3d {
        if (which == 0 && !breakpoints.empty()) {
            const Vec3& p = world_pos[breakpoints.front()];
            return {p.x - c.x, p.y - c.y, p.z - c.z};
        }
        Eigen::Vector3d r = Eigen::Vector3d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            double w = std::pow(static_cast<double>(i + 1), which + 1);
            r += w * Eigen::Vector3d(world_pos[i].x - c.x, world_pos[i].y - c.y,
                                     world_pos[i].z - c.z);
        }
        return r;
    };
    for (int a = 0; a < 2; ++a) {
        double d = 0;
        for (int which = 0; which < 3 && std::abs(d) < 1e-9; ++which)
            d = axes.col(a).dot(ref_dir(which));
        if (d < 0) axes.col(a) = -axes.col(a);
    }
    axes.col(2) = axes.col(0).cross(axes.col(1));  // right-handed
    rotation = quaternion_from_matrix(axes);
    local_pos.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Vector3d d(world_pos[i].x - c.x, world_pos[i].y - c.y, world_pos[i].z - c.z);
        Eigen::Vector3d q = axes.transpose() * d;
        local_pos[i] = {q.x(), q.y(), q.z()};
    }
}

} // namespace detail

// Builds a canonicalized Fragment from a sub-molecule given in world
// coordinates. breakpoint flags refer to the input atom indices.
inline Fragment make_fragment(const std::vector<Atom>& atoms, const std::vector<Bond>& bonds,
                              const std::vector<bool>& is_breakpoint,
                              const std::vector<int>& orig_ids = {}) {
    if (atoms.empty()) throw Error("empty-fragment", "fragment has no atoms");
    auto [sig, order] = detail::canonical_labeling(atoms, bonds, is_breakpoint);
    std::vector<int> inverse(atoms.size());
    for (std::size_t p = 0; p < order.size(); ++p) inverse[order[p]] = static_cast<int>(p);

    Fragment f;
    f.canonical_key = sig;
    std::vector<Vec3> world_pos(atoms.size());
    for (std::size_t p = 0; p < order.size(); ++p) {
        Atom a = atoms[order[p]];
        a.id = static_cast<int>(p);
        world_pos[p] = a.position;
        f.atoms.push_back(std::move(a));
        if (is_breakpoint[order[p]]) f.breakpoints.push_back(static_cast<int>(p));
        if (!orig_ids.empty()) f.orig_ids.push_back(orig_ids[order[p]]);
    }
    std::sort(f.breakpoints.begin(), f.breakpoints.end());
    for (Bond b : bonds) {
        b.a = inverse[b.a];
        b.b = inverse[b.b];
        if (b.a > b.b) std::swap(b.a, b.b);
        f.bonds.push_back(b);
    }
    std::sort(f.bonds.begin(), f.bonds.end(), [](const Bond& x, const Bond& y) {
        return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    std::vector<Vec3> local;
    detail::compute_canonical_frame(world_pos, f.breakpoints, f.world_translation,
                                    f.world_rotation, local);
    for (std::size_t p = 0; p < local.size(); ++p) f.atoms[p].position = local[p];
    return f;
}

inline std::string canonical_key(const Fragment& f) { return f.canonical_key; }

// Graph-level canonical key of a whole molecule (geometry ignored); used for
// deduplication.
inline std::string molecule_key(const Molecule& m) {
    std::vector<bool> bp(m.atoms.size(), false);
    return detail::canonical_labeling(m.atoms, m.bonds, bp).first;
}

// ---------------------------------------------------------------------------
// Fragmentation

// Reduced cut-rule table over acyclic single bonds. Ring bonds are never cut.
struct RuleTable {
    bool cut_ring_attachment = true;   // >=1 endpoint belongs to a ring
    bool cut_carbonyl_adjacent = true; // adjacent to a C=O carbon
    bool cut_hetero_linkage = true;    // C-O / C-N with >=2 heavy atoms each side
};

struct CutBond {
    int bond_index = 0;   // into molecule.bonds
    int fragment_a = 0;   // incident fragments (filled by fragment())
    int fragment_b = 0;
    int breakpoint_a = 0; // canonical atom id within fragment_a
    int breakpoint_b = 0;
};

namespace detail {

inline bool atom_in_ring(const Molecule& m, const std::vector<std::vector<int>>& adj, int atom) {
    for (int bi : adj[atom])
        if (m.bonds[bi].in_ring) return true;
    return false;
}

inline bool adjacent_to_carbonyl(const Molecule& m, const std::vector<std::vector<int>>& adj,
                                 const Bond& bond) {
    for (int atom : {bond.a, bond.b}) {
        if (m.atoms[atom].element != "C") continue;
        for (int bi : adj[atom]) {
            const Bond& b = m.bonds[bi];
            if (b.order != BondOrder::Double) continue;
            int other = b.a == atom ? b.b : b.a;
            if (m.atoms[other].element == "O") return true;
        }
    }
    return false;
}

// component sizes on the two sides of a removed bond
inline std::pair<int, int> side_sizes(const Molecule& m, int bond_index) {
    const Bond& cut = m.bonds[bond_index];
    auto adj = m.adjacency();
    auto bfs = [&](int start) {
        std::vector<bool> seen(m.atoms.size(), false);
        std::vector<int> stack{start};
        seen[start] = true;
        int count = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int bi : adj[v]) {
                if (bi == bond_index) continue;
                int u = m.bonds[bi].a == v ? m.bonds[bi].b : m.bonds[bi].a;
                if (!seen[u]) {
                    seen[u] = true;
                    ++count;
                    stack.push_back(u);
                }
            }
        }
        return count;
    };
    return {bfs(cut.a), bfs(cut.b)};
}

} // namespace detail

// Returns indices of bonds the rule table selects for cutting.
inline std::vector<int> select_cut_bonds(const Molecule& m, const RuleTable& rules) {
    auto adj = m.adjacency();
    std::vector<int> cuts;
    for (std::size_t bi = 0; bi < m.bonds.size(); ++bi) {
        const Bond& b = m.bonds[bi];
        if (b.in_ring || b.order != BondOrder::Single) continue;
        bool cut = false;
        if (rules.cut_ring_attachment &&
            (detail::atom_in_ring(m, adj, b.a) || detail::atom_in_ring(m, adj, b.b)))
            cut = true;
        if (!cut && rules.cut_carbonyl_adjacent && detail::adjacent_to_carbonyl(m, adj, b))
            cut = true;
        if (!cut && rules.cut_hetero_linkage) {
            const std::string& ea = m.atoms[b.a].element;
            const std::string& eb = m.atoms[b.b].element;
            bool hetero = (ea == "C" && (eb == "O" || eb == "N")) ||
                          (eb == "C" && (ea == "O" || ea == "N"));
            if (hetero) {
                auto [sa, sb] = detail::side_sizes(m, static_cast<int>(bi));
                if (sa >= 2 && sb >= 2) cut = true;
            }
        }
        if (cut) cuts.push_back(static_cast<int>(bi));
    }
    return cuts;
}

struct FragmentationResult {
    std::vector<Fragment> fragments;
    std::vector<CutBond> cut_bonds;
};

// Cuts the molecule into fragments per the rule table. Every cut bond records
// its incident fragments and the canonical breakpoint atom on each side.
inline FragmentationResult fragment(const Molecule& m, const RuleTable& rules = {}) {
    if (!m.connected())
        throw Error("multi-component", "fragmentation requires a connected molecule");
    FragmentationResult result;
    if (m.atoms.empty()) return result;
    std::vector<int> cuts = select_cut_bonds(m, rules);
    std::set<int> cut_set(cuts.begin(), cuts.end());

    // connected components after removing cut bonds
    auto adj = m.adjacency();
    std::vector<int> comp(m.atoms.size(), -1);
    int ncomp = 0;
    for (std::size_t s = 0; s < m.atoms.size(); ++s) {
        if (comp[s] != -1) continue;
        std::vector<int> stack{static_cast<int>(s)};
        comp[s] = ncomp;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int bi : adj[v]) {
                if (cut_set.count(bi)) continue;
                int u = m.bonds[bi].a == v ? m.bonds[bi].b : m.bonds[bi].a;
                if (comp[u] == -1) {
                    comp[u] = ncomp;
                    stack.push_back(u);
                }
            }
        }
        ++ncomp;
    }

    // per-component atom lists and breakpoint flags
    std::vector<std::vector<int>> comp_atoms(ncomp);
    for (std::size_t i = 0; i < m.atoms.size(); ++i)
        comp_atoms[comp[i]].push_back(static_cast<int>(i));
    std::vector<bool> atom_is_bp(m.atoms.size(), false);
    for (int bi : cuts) {
        atom_is_bp[m.bonds[bi].a] = true;
        atom_is_bp[m.bonds[bi].b] = true;
    }

    std::vector<std::unordered_map<int, int>> orig_to_canon(ncomp);
    for (int ci = 0; ci < ncomp; ++ci) {
        std::vector<Atom> atoms;
        std::vector<Bond> bonds;
        std::vector<bool> bp;
        std::vector<int> orig_ids;
        std::unordered_map<int, int> local_of;
        for (int a : comp_atoms[ci]) {
            local_of[a] = static_cast<int>(atoms.size());
            atoms.push_back(m.atoms[a]);
            bp.push_back(atom_is_bp[a]);
            orig_ids.push_back(a);
        }
        for (std::size_t bi = 0; bi < m.bonds.size(); ++bi) {
            if (cut_set.count(static_cast<int>(bi))) continue;
            const Bond& b = m.bonds[bi];
            if (comp[b.a] != ci) continue;
            Bond local = b;
            local.a = local_of[b.a];
            local.b = local_of[b.b];
            bonds.push_back(local);
        }
        Fragment f = make_fragment(atoms, bonds, bp, orig_ids);
        for (std::size_t p = 0; p < f.orig_ids.size(); ++p)
            orig_to_canon[ci][f.orig_ids[p]] = static_cast<int>(p);
        result.fragments.push_back(std::move(f));
    }

    for (int bi : cuts) {
        const Bond& b = m.bonds[bi];
        CutBond cb;
        cb.bond_index = bi;
        cb.fragment_a = comp[b.a];
        cb.fragment_b = comp[b.b];
        cb.breakpoint_a = orig_to_canon[comp[b.a]][b.a];
        cb.breakpoint_b = orig_to_canon[comp[b.b]][b.b];
        result.cut_bonds.push_back(cb);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Fragment vocabulary

// Reserved control-symbol indices.
enum ControlSymbol : int { TOK_BOB = 0, TOK_EOB = 1, TOK_BOS = 2, TOK_EOS = 3, TOK_PAD = 4 };
inline constexpr int kNumControlSymbols = 5;

inline const char* control_symbol_name(int index) {
    switch (index) {
        case TOK_BOB: return "BOB";
        case TOK_EOB: return "EOB";
        case TOK_BOS: return "BOS";
        case TOK_EOS: return "EOS";
        case TOK_PAD: return "PAD";
    }
    return "?";
}

class FragmentVocab {
public:
    FragmentVocab() = default;

    // total size including the 5 control symbols
    int size() const { return kNumControlSymbols + static_cast<int>(entries_.size()); }

    bool contains(const std::string& key) const { return index_.count(key) > 0; }

    int index_of(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw Error("vocab-error", "fragment key not in vocabulary");
        return it->second;
    }

    const Fragment& entry(int index) const {
        if (index < kNumControlSymbols || index >= size())
            throw Error("vocab-error", "index " + std::to_string(index) + " is not a fragment entry");
        return entries_[index - kNumControlSymbols];
    }

    static bool is_control(int index) { return index >= 0 && index < kNumControlSymbols; }

    void add(Fragment f) {
        if (index_.count(f.canonical_key)) return;
        // store the representative in canonical pose only
        f.world_translation = Vec3{};
        f.world_rotation = Quaternion::identity();
        f.orig_ids.clear();
        index_[f.canonical_key] = size();
        entries_.push_back(std::move(f));
    }

    const std::vector<Fragment>& entries() const { return entries_; }

private:
    std::vector<Fragment> entries_;
    std::unordered_map<std::string, int> index_;
};

// Vocabulary = controls + the max_size most frequent fragment keys, ties
// broken lexicographically; representative geometry is the first occurrence.
inline FragmentVocab build_vocab(const std::vector<Molecule>& corpus, const RuleTable& rules,
                                 std::size_t max_size) {
    if (corpus.empty()) throw Error("empty-corpus", "cannot build a vocabulary from no molecules");
    std::map<std::string, std::size_t> counts;
    std::map<std::string, Fragment> first_seen;
    for (const Molecule& m : corpus) {
        FragmentationResult fr = fragment(m, rules);
        for (Fragment& f : fr.fragments) {
            ++counts[f.canonical_key];
            first_seen.try_emplace(f.canonical_key, f);
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    if (ranked.size() > max_size) ranked.resize(max_size);
    FragmentVocab vocab;
    for (const auto& [key, count] : ranked) vocab.add(first_seen.at(key));
    return vocab;
}

// Persists the vocabulary: one fragment record per entry (atoms in canonical
// pose, breakpoints in a data field) plus index.tsv mapping key -> index.
inline void save_vocab(const FragmentVocab& vocab, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.tsv");
    for (int i = kNumControlSymbols; i < vocab.size(); ++i) {
        const Fragment& f = vocab.entry(i);
        index << f.canonical_key << '\t' << i << '\n';
        Molecule m;
        m.name = "frag_" + std::to_string(i);
        m.atoms = f.atoms;
        m.bonds = f.bonds;
        std::ofstream rec(dir / (m.name + ".sdf"));
        rec << write_molecule(m);
        rec << "> <breakpoints>\n";
        for (std::size_t k = 0; k < f.breakpoints.size(); ++k)
            rec << (k ? " " : "") << f.breakpoints[k];
        rec << "\n\n$$$$\n";
    }
}

inline FragmentVocab load_vocab(const std::filesystem::path& dir) {
    std::ifstream index(dir / "index.tsv");
    if (!index) throw Error("vocab-error", "cannot open " + (dir / "index.tsv").string());
    std::vector<std::pair<int, std::string>> order;
    std::string key;
    int idx;
    while (index >> key >> idx) order.emplace_back(idx, key);
    std::sort(order.begin(), order.end());
    FragmentVocab vocab;
    for (const auto& [i, k] : order) {
        std::ifstream rec(dir / ("frag_" + std::to_string(i) + ".sdf"));
        if (!rec) throw Error("vocab-error", "missing fragment record " + std::to_string(i));
        std::stringstream buf;
        buf << rec.rdbuf();
        std::string text = buf.str();
        // split molecule block from data fields
        std::size_t mend = text.find("M  END");
        Molecule m = parse_molecule(text.substr(0, mend + 7));
        std::vector<bool> bp(m.atoms.size(), false);
        std::size_t tag = text.find("> <breakpoints>");
        if (tag != std::string::npos) {
            std::istringstream bps(text.substr(text.find('\n', tag) + 1));
            int b;
            while (bps >> b)
                if (b >= 0 && b < static_cast<int>(m.atoms.size())) bp[b] = true;
        }
        if (make_fragment(m.atoms, m.bonds, bp).canonical_key != k)
            throw Error("vocab-error", "fragment record " + std::to_string(i) +
                                           " does not match its index key");
        // keep the stored geometry verbatim: re-canonicalizing could pick a
        // different (equally valid) frame when the inertia axes are degenerate
        Fragment f;
        f.atoms = m.atoms;
        f.bonds = m.bonds;
        for (std::size_t a = 0; a < bp.size(); ++a)
            if (bp[a]) f.breakpoints.push_back(static_cast<int>(a));
        f.canonical_key = k;
        f.world_translation = Vec3{};
        f.world_rotation = Quaternion::identity();
        vocab.add(std::move(f));
    }
    return vocab;
}

} // namespace desert
