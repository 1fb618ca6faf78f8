#pragma once

// Rebuilds a connected 3D molecule from a decoded fragment tree by
// instantiating vocabulary geometry at each node's pose and bonding the
// nearest unused breakpoint pair across every tree edge.

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "desert/chem.hpp"
#include "desert/codec.hpp"
#include "desert/common.hpp"

namespace desert {

struct FormedBond {
    int parent_node = 0;
    int child_node = 0;
    int parent_atom = 0;  // atom ids in the assembled molecule
    int child_atom = 0;
    double length = 0.0;
};

struct AssemblyResult {
    Molecule molecule;
    std::vector<FormedBond> bonds_formed;
    int leftover_breakpoints = 0;
    std::vector<std::string> clash_warnings;
};

inline double max_valence(const std::string& element) {
    if (element == "C") return 4;
    if (element == "N") return 3;
    if (element == "O") return 2;
    if (element == "S") return 6;
    if (element == "P") return 5;
    if (element == "F" || element == "Cl" || element == "Br" || element == "I") return 1;
    if (element == "B") return 3;
    return 4;
}

inline AssemblyResult assemble(const FragmentTree& tree, const FragmentVocab& vocab) {
    if (tree.empty()) throw Error("empty-tree", "nothing to assemble");
    AssemblyResult result;
    Molecule& mol = result.molecule;

    const int n = static_cast<int>(tree.nodes.size());
    std::vector<int> atom_base(n, 0);
    std::vector<std::vector<bool>> bp_used(n);
    std::vector<const Fragment*> frags(n, nullptr);

    for (int i = 0; i < n; ++i) {
        const TreeNode& node = tree.nodes[i];
        int index = node.vocab_index >= 0 ? node.vocab_index : vocab.index_of(node.key);
        const Fragment& f = vocab.entry(index);
        frags[i] = &f;
        if (!node.rotation.is_unit(1e-3))
            throw Error("invalid-rotation", "node " + std::to_string(i) + " pose rotation not unit");
        atom_base[i] = static_cast<int>(mol.atoms.size());
        bp_used[i].assign(f.atoms.size(), false);
        for (const Atom& a : f.atoms) {
            Atom w = a;
            w.id = static_cast<int>(mol.atoms.size());
            w.position = node.rotation.rotate(a.position) + node.translation;
            mol.atoms.push_back(std::move(w));
        }
        for (Bond b : f.bonds) {
            b.a += atom_base[i];
            b.b += atom_base[i];
            mol.bonds.push_back(b);
        }
    }

    // DFS order over tree edges
    std::vector<int> order;
    std::vector<int> stack{tree.root};
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        order.push_back(v);
        const auto& ch = tree.nodes[v].children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }

    for (int v : order) {
        for (int child : tree.nodes[v].children) {
            // nearest unused breakpoint pair between parent v and child
            double best = std::numeric_limits<double>::infinity();
            int bp_p = -1, bp_c = -1;
            for (int p : frags[v]->breakpoints) {
                if (bp_used[v][p]) continue;
                Vec3 pp = mol.atoms[atom_base[v] + p].position;
                for (int q : frags[child]->breakpoints) {
                    if (bp_used[child][q]) continue;
                    double d = distance(pp, mol.atoms[atom_base[child] + q].position);
                    if (d < best) {
                        best = d;
                        bp_p = p;
                        bp_c = q;
                    }
                }
            }
            if (bp_p < 0)
                throw Error("assembly-error", "edge " + std::to_string(v) + "->" +
                                                  std::to_string(child) +
                                                  " has no unused breakpoint pair");
            bp_used[v][bp_p] = true;
            bp_used[child][bp_c] = true;
            Bond b;
            b.a = atom_base[v] + bp_p;
            b.b = atom_base[child] + bp_c;
            b.order = BondOrder::Single;
            mol.bonds.push_back(b);
            result.bonds_formed.push_back({v, child, b.a, b.b, best});
        }
    }

    for (int i = 0; i < n; ++i)
        for (int p : frags[i]->breakpoints)
            if (!bp_used[i][p]) ++result.leftover_breakpoints;

    mark_ring_bonds(mol);

    // clash scan: non-bonded heavy atom pairs closer than 0.7 A
    std::set<std::pair<int, int>> bonded_pairs;
    for (const Bond& b : mol.bonds) bonded_pairs.insert(std::minmax(b.a, b.b));
    for (std::size_t i = 0; i < mol.atoms.size(); ++i)
        for (std::size_t j = i + 1; j < mol.atoms.size(); ++j) {
            if (bonded_pairs.count({static_cast<int>(i), static_cast<int>(j)})) continue;
            double d = distance(mol.atoms[i].position, mol.atoms[j].position);
            if (d < 0.7)
                result.clash_warnings.push_back("atoms " + std::to_string(i) + "/" +
                                                std::to_string(j) + " at " + std::to_string(d) + " A");
        }
    mol.name = "assembled";
    return result;
}

struct SanitizeResult {
    bool accepted = false;
    std::string reason;  // empty when accepted; else "valence" | "clash" | "connectivity"
};

// Valence within element maxima, no heavy-atom pair closer than 0.7 A, and a
// connected graph.
inline SanitizeResult sanitize(const Molecule& m) {
    std::vector<double> valence(m.atoms.size(), 0.0);
    for (const Bond& b : m.bonds) {
        double v = bond_order_valence(b.order);
        valence[b.a] += v;
        valence[b.b] += v;
    }
    for (std::size_t i = 0; i < m.atoms.size(); ++i)
        if (valence[i] > max_valence(m.atoms[i].element) + 1e-9)
            return {false, "valence"};
    std::set<std::pair<int, int>> bonded_pairs;
    for (const Bond& b : m.bonds) bonded_pairs.insert(std::minmax(b.a, b.b));
    for (std::size_t i = 0; i < m.atoms.size(); ++i)
        for (std::size_t j = i + 1; j < m.atoms.size(); ++j) {
            if (bonded_pairs.count({static_cast<int>(i), static_cast<int>(j)})) continue;
            if (distance(m.atoms[i].position, m.atoms[j].position) < 0.7)
                return {false, "clash"};
        }
    if (!m.connected()) return {false, "connectivity"};
    return {true, ""};
}

} // namespace desert
