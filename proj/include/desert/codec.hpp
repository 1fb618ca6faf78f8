#pragma once

// Fragment-tree construction, depth-first linearization with [BOB]/[EOB]
// branch markers, and discretization of fragment poses into bin indices.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "desert/chem.hpp"
#include "desert/common.hpp"
#include "desert/geom.hpp"

namespace desert {

struct CodecParams {
    double max_translation = 32.0;  // L, Angstrom; components live in [-L/2, L/2)
    int translation_bins = 64;      // b_t
    int rotation_bins = 64;         // b_r
};

struct TreeNode {
    std::string key;                 // canonical fragment key
    int vocab_index = -1;            // filled when a vocabulary is available
    Vec3 translation;                // canonical frame -> world (grid frame)
    Quaternion rotation;
    int parent = -1;
    int parent_breakpoint = -1;      // canonical atom id of the connecting breakpoint, parent side
    int child_breakpoint = -1;       // canonical atom id, this node's side
    std::vector<int> children;
    int breakpoint_count = 0;
};

struct FragmentTree {
    std::vector<TreeNode> nodes;
    int root = -1;

    bool empty() const { return nodes.empty(); }
};

// Root: the degree-1 fragment with smallest canonical key (single-node trees
// root themselves). Children ordered by ascending distance of the connecting
// breakpoint from the parent centroid, ties by canonical key.
inline FragmentTree build_tree(const std::vector<Fragment>& fragments,
                               const std::vector<CutBond>& cut_bonds) {
    const int n = static_cast<int>(fragments.size());
    if (n == 0) throw Error("empty-tree", "no fragments");
    if (static_cast<int>(cut_bonds.size()) != n - 1)
        throw Error("internal-consistency", "cut structure is not a tree");

    std::vector<std::vector<std::pair<int, const CutBond*>>> adj(n);  // (neighbor, edge)
    for (const CutBond& cb : cut_bonds) {
        if (cb.fragment_a == cb.fragment_b)
            throw Error("internal-consistency", "cut bond joins a fragment to itself");
        adj[cb.fragment_a].emplace_back(cb.fragment_b, &cb);
        adj[cb.fragment_b].emplace_back(cb.fragment_a, &cb);
    }

    int root = 0;
    if (n > 1) {
        root = -1;
        for (int i = 0; i < n; ++i) {
            if (adj[i].size() != 1) continue;
            if (root == -1 || fragments[i].canonical_key < fragments[root].canonical_key)
                root = i;
        }
        if (root == -1) throw Error("internal-consistency", "tree has no degree-1 node");
    }

    FragmentTree tree;
    tree.nodes.resize(n);
    tree.root = root;
    std::vector<bool> visited(n, false);
    // BFS assigning parents, then order children
    std::vector<int> queue{root};
    visited[root] = true;
    tree.nodes[root].parent = -1;
    while (!queue.empty()) {
        int v = queue.back();
        queue.pop_back();
        const Fragment& fv = fragments[v];
        TreeNode& node = tree.nodes[v];
        node.key = fv.canonical_key;
        node.translation = fv.world_translation;
        node.rotation = fv.world_rotation;
        node.breakpoint_count = static_cast<int>(fv.breakpoints.size());

        struct ChildRef {
            double dist;
            std::string key;
            int child;
            int parent_bp;
            int child_bp;
        };
        std::vector<ChildRef> kids;
        for (auto [u, cb] : adj[v]) {
            if (visited[u]) continue;
            visited[u] = true;
            int pbp = cb->fragment_a == v ? cb->breakpoint_a : cb->breakpoint_b;
            int cbp = cb->fragment_a == v ? cb->breakpoint_b : cb->breakpoint_a;
            Vec3 bp_world = fv.world_position(pbp);
            kids.push_back({distance(bp_world, fv.world_translation),
                            fragments[u].canonical_key, u, pbp, cbp});
        }
        std::sort(kids.begin(), kids.end(), [](const ChildRef& x, const ChildRef& y) {
            if (x.dist != y.dist) return x.dist < y.dist;
            if (x.key != y.key) return x.key < y.key;
            return x.child < y.child;
        });
        for (const ChildRef& k : kids) {
            tree.nodes[k.child].parent = v;
            tree.nodes[k.child].parent_breakpoint = k.parent_bp;
            tree.nodes[k.child].child_breakpoint = k.child_bp;
            node.children.push_back(k.child);
            queue.push_back(k.child);
        }
    }
    for (bool v : visited)
        if (!v) throw Error("internal-consistency", "cut structure is cyclic or disconnected");
    return tree;
}

// ---------------------------------------------------------------------------
// Pose discretization

inline std::array<int, 3> discretize_translation(const Vec3& p, double L, int bins) {
    std::array<int, 3> out{};
    const double comps[3] = {p.x, p.y, p.z};
    for (int i = 0; i < 3; ++i) {
        if (comps[i] < -L / 2 || comps[i] >= L / 2)
            throw Error("range-error", "translation component " + std::to_string(comps[i]) +
                                           " outside [-L/2, L/2)");
        out[i] = static_cast<int>(std::floor((comps[i] + L / 2) / (L / bins)));
        out[i] = std::clamp(out[i], 0, bins - 1);
    }
    return out;
}

inline Vec3 undiscretize_translation(const std::array<int, 3>& idx, double L, int bins) {
    auto center = [&](int i) { return -L / 2 + (i + 0.5) * (L / bins); };
    return {center(idx[0]), center(idx[1]), center(idx[2])};
}

inline std::array<int, 4> discretize_rotation(const Quaternion& q, int bins) {
    if (!q.is_unit()) throw Error("invalid-rotation", "quaternion is not unit-norm");
    Quaternion c = q.canonicalized();
    const double comps[4] = {c.w, c.x, c.y, c.z};
    std::array<int, 4> out{};
    for (int i = 0; i < 4; ++i) {
        out[i] = static_cast<int>(std::floor((comps[i] + 1.0) / (2.0 / bins)));
        out[i] = std::clamp(out[i], 0, bins - 1);
    }
    return out;
}

inline Quaternion undiscretize_rotation(const std::array<int, 4>& idx, int bins) {
    auto center = [&](int i) { return -1.0 + (i + 0.5) * (2.0 / bins); };
    Quaternion q{center(idx[0]), center(idx[1]), center(idx[2]), center(idx[3])};
    double n = q.norm();
    if (n < 1e-12) return Quaternion::identity();
    return q.normalized().canonicalized();
}

// ---------------------------------------------------------------------------
// Token sequences

struct Token {
    // control: one of TOK_BOB/TOK_EOB/TOK_BOS/TOK_EOS/TOK_PAD; fragment
    // tokens carry the vocabulary index plus bin indices.
    int symbol = TOK_PAD;            // control id, or the fragment vocab index
    bool is_fragment = false;
    std::array<int, 3> pc{};
    std::array<int, 4> rc{};

    static Token control(int id) { return Token{id, false, {}, {}}; }
    static Token fragment_token(int index, std::array<int, 3> pc, std::array<int, 4> rc) {
        return Token{index, true, pc, rc};
    }
};

using TokenSequence = std::vector<Token>;

inline bool markers_balanced(const TokenSequence& seq) {
    int depth = 0;
    for (const Token& t : seq) {
        if (t.is_fragment) continue;
        if (t.symbol == TOK_BOB) ++depth;
        if (t.symbol == TOK_EOB && --depth < 0) return false;
    }
    return depth == 0;
}

// DFS linearization. Branch markers wrap each child of a node with >= 2
// children; single children are emitted inline.
inline TokenSequence linearize(const FragmentTree& tree, const FragmentVocab& vocab,
                               const CodecParams& params = {}) {
    if (tree.empty()) throw Error("empty-tree", "cannot linearize an empty tree");
    TokenSequence seq;
    seq.push_back(Token::control(TOK_BOS));
    std::vector<std::pair<int, int>> stack;  // (node, -1) = emit; (-1, marker) = control
    stack.emplace_back(tree.root, -1);
    while (!stack.empty()) {
        auto [node, marker] = stack.back();
        stack.pop_back();
        if (node == -1) {
            seq.push_back(Token::control(marker));
            continue;
        }
        const TreeNode& tn = tree.nodes[node];
        int index = tn.vocab_index >= 0 ? tn.vocab_index : vocab.index_of(tn.key);
        auto pc = discretize_translation(tn.translation, params.max_translation,
                                         params.translation_bins);
        auto rc = discretize_rotation(tn.rotation, params.rotation_bins);
        seq.push_back(Token::fragment_token(index, pc, rc));
        if (tn.children.size() == 1) {
            stack.emplace_back(tn.children[0], -1);
        } else if (tn.children.size() >= 2) {
            for (auto it = tn.children.rbegin(); it != tn.children.rend(); ++it) {
                stack.emplace_back(-1, TOK_EOB);
                stack.emplace_back(*it, -1);
                stack.emplace_back(-1, TOK_BOB);
            }
        }
    }
    seq.push_back(Token::control(TOK_EOS));
    return seq;
}

// Inverse of linearize. Poses are reconstructed at bin centers; structural
// layout (keys, parent/child links) is exact.
inline FragmentTree delinearize(const TokenSequence& seq, const FragmentVocab& vocab,
                                const CodecParams& params = {}) {
    if (seq.size() < 2 || seq.front().is_fragment || seq.front().symbol != TOK_BOS ||
        seq.back().is_fragment || seq.back().symbol != TOK_EOS)
        throw Error("malformed-sequence", "sequence must be [BOS] ... [EOS]");
    if (!markers_balanced(seq))
        throw Error("malformed-sequence", "unbalanced [BOB]/[EOB] markers");

    FragmentTree tree;
    // stack of "attachment" nodes; -1 sentinel marks a branch scope opener
    std::vector<int> stack;
    int current = -1;
    for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
        const Token& t = seq[i];
        if (t.is_fragment) {
            if (t.symbol < kNumControlSymbols || t.symbol >= vocab.size())
                throw Error("vocab-error", "fragment index " + std::to_string(t.symbol) +
                                               " outside the vocabulary");
            TreeNode node;
            node.vocab_index = t.symbol;
            node.key = vocab.entry(t.symbol).canonical_key;
            node.translation = undiscretize_translation(t.pc, params.max_translation,
                                                        params.translation_bins);
            node.rotation = undiscretize_rotation(t.rc, params.rotation_bins);
            node.parent = current;
            int id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(std::move(node));
            if (current == -1) {
                if (tree.root != -1)
                    throw Error("malformed-sequence", "second root fragment outside any branch");
                tree.root = id;
            } else {
                tree.nodes[current].children.push_back(id);
            }
            current = id;
        } else if (t.symbol == TOK_BOB) {
            stack.push_back(current);
            // children inside the branch attach to the node open at [BOB]
        } else if (t.symbol == TOK_EOB) {
            if (stack.empty())
                throw Error("malformed-sequence", "[EOB] without matching [BOB]");
            current = stack.back();
            stack.pop_back();
        } else if (t.symbol == TOK_BOS || t.symbol == TOK_EOS) {
            throw Error("malformed-sequence", "interior [BOS]/[EOS]");
        }
        // PAD tokens are not expected inside a decoded sequence
    }
    if (tree.root == -1) throw Error("empty-tree", "sequence contains no fragment");
    return tree;
}

// ---------------------------------------------------------------------------
// Text form: `F:<C>:<px>,<py>,<pz>:<rw>,<rx>,<ry>,<rz>` and literal
// BOS/EOS/BOB/EOB, whitespace separated, one sequence per line.

inline std::string sequence_to_text(const TokenSequence& seq) {
    std::ostringstream os;
    bool first = true;
    for (const Token& t : seq) {
        if (!first) os << ' ';
        first = false;
        if (t.is_fragment) {
            os << "F:" << t.symbol << ':' << t.pc[0] << ',' << t.pc[1] << ',' << t.pc[2] << ':'
               << t.rc[0] << ',' << t.rc[1] << ',' << t.rc[2] << ',' << t.rc[3];
        } else {
            os << control_symbol_name(t.symbol);
        }
    }
    return os.str();
}

inline TokenSequence sequence_from_text(const std::string& line) {
    TokenSequence seq;
    std::istringstream is(line);
    std::string word;
    while (is >> word) {
        if (word == "BOS") seq.push_back(Token::control(TOK_BOS));
        else if (word == "EOS") seq.push_back(Token::control(TOK_EOS));
        else if (word == "BOB") seq.push_back(Token::control(TOK_BOB));
        else if (word == "EOB") seq.push_back(Token::control(TOK_EOB));
        else if (word == "PAD") seq.push_back(Token::control(TOK_PAD));
        else if (word.rfind("F:", 0) == 0) {
            Token t;
            t.is_fragment = true;
            char colon, comma;
            std::istringstream ws(word.substr(2));
            if (!(ws >> t.symbol >> colon >> t.pc[0] >> comma >> t.pc[1] >> comma >> t.pc[2] >>
                  colon >> t.rc[0] >> comma >> t.rc[1] >> comma >> t.rc[2] >> comma >> t.rc[3]))
                throw Error("parse-error", "bad fragment token: " + word);
            seq.push_back(t);
        } else {
            throw Error("parse-error", "unknown token word: " + word);
        }
    }
    return seq;
}

// Encodes a molecule straight to a token sequence (fragment -> tree ->
// linearize) against a vocabulary.
inline TokenSequence encode_molecule(const Molecule& m, const FragmentVocab& vocab,
                                     const RuleTable& rules = {}, const CodecParams& params = {}) {
    FragmentationResult fr = fragment(m, rules);
    FragmentTree tree = build_tree(fr.fragments, fr.cut_bonds);
    return linearize(tree, vocab, params);
}

} // namespace desert
