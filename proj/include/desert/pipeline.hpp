#pragma once

// End-to-end orchestration: post-processing (dedup, external scoring),
// evaluation metrics, synthetic corpus generation and the run driver.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "desert/assembler.hpp"
#include "desert/chem.hpp"
#include "desert/codec.hpp"
#include "desert/common.hpp"
#include "desert/geom.hpp"
#include "desert/model.hpp"
#include "desert/sketch.hpp"

namespace desert {

// ---------------------------------------------------------------------------
// Deduplication: graph-keyed (conformers of the same graph collapse).

inline std::vector<Molecule> dedup(const std::vector<Molecule>& mols) {
    std::vector<Molecule> out;
    std::set<std::string> seen;
    for (const Molecule& m : mols)
        if (seen.insert(molecule_key(m)).second) out.push_back(m);
    return out;
}

// ---------------------------------------------------------------------------
// External scorer subprocess. Protocol: SDF records on stdin, one decimal
// score per molecule on stdout (same order), exit code 0.

struct ScoreResult {
    std::vector<Molecule> kept;
    std::vector<double> kept_scores;
    std::vector<double> all_scores;  // scored molecules, input order
    int unscored = 0;                // dropped because the scorer failed
};

inline std::vector<double> run_scorer(const std::string& command,
                                      const std::vector<Molecule>& mols) {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path();
    fs::path in = dir / ("desert_score_in_" + std::to_string(::getpid()) + ".sdf");
    fs::path out = dir / ("desert_score_out_" + std::to_string(::getpid()) + ".txt");
    {
        std::ofstream os(in);
        write_sdf(os, mols);
    }
    std::string cmd = command + " < " + in.string() + " > " + out.string();
    int rc = std::system(cmd.c_str());
    std::vector<double> scores;
    if (rc == 0) {
        std::ifstream is(out);
        double s;
        while (is >> s) scores.push_back(s);
    }
    fs::remove(in);
    fs::remove(out);
    if (rc != 0) throw Error("scorer-failure", "scorer exited with status " + std::to_string(rc));
    if (scores.size() != mols.size())
        throw Error("scorer-protocol", "scorer returned " + std::to_string(scores.size()) +
                                           " scores for " + std::to_string(mols.size()) +
                                           " molecules");
    return scores;
}

// Lower scores are better; keeps molecules with score <= threshold.
inline ScoreResult score_filter(const std::vector<Molecule>& mols, const std::string& scorer,
                                double threshold) {
    ScoreResult result;
    if (mols.empty()) return result;
    std::vector<double> scores;
    try {
        scores = run_scorer(scorer, mols);
    } catch (const Error& e) {
        if (std::string(e.code()) == "scorer-protocol") throw;
        result.unscored = static_cast<int>(mols.size());
        return result;
    }
    result.all_scores = scores;
    for (std::size_t i = 0; i < mols.size(); ++i)
        if (scores[i] <= threshold) {
            result.kept.push_back(mols[i]);
            result.kept_scores.push_back(scores[i]);
        }
    return result;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
    double uniq = 0, nov = 0, succ = 0, div = 0, prod = 0;
    double median_score = 0;
    std::size_t total = 0, unique_count = 0, scored = 0;
};

namespace detail {

inline std::map<std::string, int> fragment_multiset(const Molecule& m, const RuleTable& rules) {
    std::map<std::string, int> counts;
    FragmentationResult fr = fragment(m, rules);
    for (const Fragment& f : fr.fragments) ++counts[f.canonical_key];
    return counts;
}

inline double multiset_jaccard(const std::map<std::string, int>& a,
                               const std::map<std::string, int>& b) {
    int inter = 0, uni = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() || ib != b.end()) {
        if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
            uni += ia->second;
            ++ia;
        } else if (ia == a.end() || ib->first < ia->first) {
            uni += ib->second;
            ++ib;
        } else {
            inter += std::min(ia->second, ib->second);
            uni += std::max(ia->second, ib->second);
            ++ia;
            ++ib;
        }
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

} // namespace detail

// uniq = unique/total; nov = unique keys not in train_keys; succ = fraction
// of scored molecules passing the threshold; div = 1 - mean pairwise
// fragment-multiset Jaccard over unique molecules (0 when fewer than 2);
// prod = uniq * nov * succ * div.
inline MetricsReport metrics(const std::vector<Molecule>& generated,
                             const std::vector<double>& scores,
                             const std::set<std::string>& train_keys, double success_threshold,
                             const RuleTable& rules = {}) {
    if (generated.empty()) throw Error("empty-input", "metrics need at least one molecule");
    MetricsReport r;
    r.total = generated.size();
    std::vector<std::string> keys;
    keys.reserve(generated.size());
    for (const Molecule& m : generated) keys.push_back(molecule_key(m));
    std::set<std::string> unique_keys(keys.begin(), keys.end());
    std::vector<const Molecule*> unique_mols;
    {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < generated.size(); ++i)
            if (seen.insert(keys[i]).second) unique_mols.push_back(&generated[i]);
    }
    r.unique_count = unique_mols.size();
    r.uniq = static_cast<double>(r.unique_count) / static_cast<double>(r.total);
    std::size_t novel = 0;
    for (const std::string& k : unique_keys)
        if (!train_keys.count(k)) ++novel;
    r.nov = static_cast<double>(novel) / static_cast<double>(unique_keys.size());
    r.scored = scores.size();
    if (!scores.empty()) {
        std::size_t pass = 0;
        for (double s : scores)
            if (s <= success_threshold) ++pass;
        r.succ = static_cast<double>(pass) / static_cast<double>(scores.size());
        std::vector<double> sorted(scores);
        std::sort(sorted.begin(), sorted.end());
        std::size_t mid = sorted.size() / 2;
        r.median_score = sorted.size() % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
    }
    if (unique_mols.size() >= 2) {
        std::vector<std::map<std::string, int>> sets;
        sets.reserve(unique_mols.size());
        for (const Molecule* m : unique_mols) sets.push_back(detail::fragment_multiset(*m, rules));
        double sum = 0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < sets.size(); ++i)
            for (std::size_t j = i + 1; j < sets.size(); ++j) {
                sum += detail::multiset_jaccard(sets[i], sets[j]);
                ++pairs;
            }
        r.div = 1.0 - sum / static_cast<double>(pairs);
    } else {
        r.div = 0.0;  // vacuous for a single unique molecule
    }
    r.prod = r.uniq * r.nov * r.succ * r.div;
    return r;
}

// ---------------------------------------------------------------------------
// Built-in base molecule set for desk-scale corpora: mono- and disubstituted
// six-membered rings plus linker chains, with plausible bond geometry.

namespace detail {

inline Molecule hexagon_ring(const std::string& name, const std::vector<std::string>& elems,
                             BondOrder order) {
    Molecule m;
    m.name = name;
    const double r = 1.39 / (2 * std::sin(3.14159265358979323846 / 6));  // circumradius
    for (int i = 0; i < 6; ++i) {
        double a = 2 * 3.14159265358979323846 * i / 6;
        m.atoms.push_back({elems[i], {r * std::cos(a), r * std::sin(a), 0.0}, i});
    }
    for (int i = 0; i < 6; ++i) {
        Bond b;
        b.a = i;
        b.b = (i + 1) % 6;
        b.order = order;
        m.bonds.push_back(b);
    }
    return m;
}

// appends a zigzag chain to molecule m starting from atom `anchor`, growing
// outward from the ring plane; returns the index of the last added atom
inline int append_chain(Molecule& m, int anchor, const std::vector<std::string>& elems,
                        const std::vector<BondOrder>& orders, const Vec3& dir) {
    Vec3 d = dir.normalized();
    Vec3 up{0, 0, 1};
    int prev = anchor;
    Vec3 pos = m.atoms[anchor].position;
    for (std::size_t i = 0; i < elems.size(); ++i) {
        // alternate slight zigzag to avoid collinearity
        Vec3 step = (d + ((i % 2) ? up * 0.5 : up * -0.5)).normalized() * 1.5;
        pos += step;
        int id = static_cast<int>(m.atoms.size());
        m.atoms.push_back({elems[i], pos, id});
        Bond b;
        b.a = prev;
        b.b = id;
        b.order = orders[i];
        m.bonds.push_back(b);
        prev = id;
    }
    return prev;
}

} // namespace detail

// Deterministic set of small molecules whose fragmentation yields a varied
// vocabulary (>= 20 distinct fragments including multi-breakpoint linkers).
inline std::vector<Molecule> builtin_base_set() {
    using detail::append_chain;
    using detail::hexagon_ring;
    std::vector<Molecule> out;

    struct RingDef {
        std::string name;
        std::vector<std::string> elems;
        BondOrder order;
    };
    std::vector<RingDef> rings = {
        {"benzene", {"C", "C", "C", "C", "C", "C"}, BondOrder::Aromatic},
        {"pyridine", {"N", "C", "C", "C", "C", "C"}, BondOrder::Aromatic},
        {"pyrimidine", {"N", "C", "N", "C", "C", "C"}, BondOrder::Aromatic},
        {"cyclohexane", {"C", "C", "C", "C", "C", "C"}, BondOrder::Single},
    };
    struct ChainDef {
        std::string name;
        std::vector<std::string> elems;
        std::vector<BondOrder> orders;
    };
    std::vector<ChainDef> chains = {
        {"methyl", {"C"}, {BondOrder::Single}},
        {"ethyl", {"C", "C"}, {BondOrder::Single, BondOrder::Single}},
        {"propyl", {"C", "C", "C"}, {BondOrder::Single, BondOrder::Single, BondOrder::Single}},
        {"ethanol", {"C", "C", "O"}, {BondOrder::Single, BondOrder::Single, BondOrder::Single}},
        {"methylamine", {"C", "N"}, {BondOrder::Single, BondOrder::Single}},
        {"fluoromethyl", {"C", "F"}, {BondOrder::Single, BondOrder::Single}},
        {"thiomethyl", {"C", "S"}, {BondOrder::Single, BondOrder::Single}},
        {"chloromethyl", {"C", "Cl"}, {BondOrder::Single, BondOrder::Single}},
        {"propylamine", {"C", "C", "N"}, {BondOrder::Single, BondOrder::Single, BondOrder::Single}},
        {"methoxymethyl", {"C", "O", "C"}, {BondOrder::Single, BondOrder::Single, BondOrder::Single}},
    };

    // monosubstituted rings
    for (const RingDef& rd : rings)
        for (const ChainDef& cd : chains) {
            Molecule m = hexagon_ring(rd.name + "_" + cd.name, rd.elems, rd.order);
            // substitute at ring atom 1 (always carbon in the defs above)
            Vec3 dir = m.atoms[1].position.normalized();
            append_chain(m, 1, cd.elems, cd.orders, dir);
            mark_ring_bonds(m);
            out.push_back(std::move(m));
        }

    // di-substituted rings: the ring fragment gains two breakpoints; para and
    // meta placements give distinct canonical keys
    for (const RingDef& rd : rings) {
        for (int second : {4, 5}) {
            Molecule m = hexagon_ring(rd.name + "_di" + std::to_string(second), rd.elems, rd.order);
            append_chain(m, 1, {"C"}, {BondOrder::Single}, m.atoms[1].position.normalized());
            append_chain(m, second, {"C"}, {BondOrder::Single},
                         m.atoms[second].position.normalized());
            mark_ring_bonds(m);
            out.push_back(std::move(m));
        }
    }

    // ring-CH2-CH2-ring: the linker fragment has two breakpoints
    {
        Molecule m = detail::hexagon_ring("bis_phenyl_ethane", {"C", "C", "C", "C", "C", "C"},
                                          BondOrder::Aromatic);
        int tail = append_chain(m, 1, {"C", "C"}, {BondOrder::Single, BondOrder::Single},
                                m.atoms[1].position.normalized());
        // second ring translated past the chain end
        Molecule ring2 = detail::hexagon_ring("", {"C", "C", "C", "C", "C", "C"}, BondOrder::Aromatic);
        Vec3 shift = m.atoms[tail].position + m.atoms[1].position.normalized() * 2.6;
        int base = static_cast<int>(m.atoms.size());
        for (Atom a : ring2.atoms) {
            a.position += shift;
            a.id = static_cast<int>(m.atoms.size());
            m.atoms.push_back(a);
        }
        for (Bond b : ring2.bonds) {
            b.a += base;
            b.b += base;
            m.bonds.push_back(b);
        }
        Bond join;
        join.a = tail;
        join.b = base + 3;  // ring2 atom nearest the chain end
        join.order = BondOrder::Single;
        m.bonds.push_back(join);
        mark_ring_bonds(m);
        out.push_back(std::move(m));
    }

    // acetophenone-like: ring with C(=O)C side chain exercises the carbonyl rule
    {
        Molecule m = detail::hexagon_ring("acetyl_benzene", {"C", "C", "C", "C", "C", "C"},
                                          BondOrder::Aromatic);
        Vec3 dir = m.atoms[1].position.normalized();
        int carbonyl = append_chain(m, 1, {"C"}, {BondOrder::Single}, dir);
        append_chain(m, carbonyl, {"O"}, {BondOrder::Double}, Vec3{0, 0, 1});
        append_chain(m, carbonyl, {"C"}, {BondOrder::Single}, dir);
        mark_ring_bonds(m);
        out.push_back(std::move(m));
    }

    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: random fragment trees sampled from the vocabulary and
// assembled with 1.5 A junction bonds along breakpoint directions.

struct SynthSample {
    Molecule molecule;
    FragmentTree tree;
};

namespace detail {

// rotation taking unit vector a to unit vector b, with a roll angle about b
inline Quaternion rotation_between(const Vec3& a, const Vec3& b, double roll) {
    Vec3 axis = a.cross(b);
    double c = std::clamp(a.dot(b), -1.0, 1.0);
    Quaternion align;
    if (axis.norm() < 1e-9) {
        if (c > 0) {
            align = Quaternion::identity();
        } else {
            // opposite vectors: rotate pi about any perpendicular axis
            Vec3 perp = std::abs(a.x) < 0.9 ? a.cross(Vec3{1, 0, 0}) : a.cross(Vec3{0, 1, 0});
            align = Quaternion::from_axis_angle(perp, 3.14159265358979323846);
        }
    } else {
        align = Quaternion::from_axis_angle(axis, std::acos(c));
    }
    return (Quaternion::from_axis_angle(b, roll) * align).normalized();
}

inline Vec3 breakpoint_direction(const Fragment& f, int bp) {
    Vec3 d = f.atoms[bp].position;  // canonical frame is centroid-centered
    if (d.norm() < 1e-6) d = Vec3{1, 0, 0};
    return d.normalized();
}

} // namespace detail

// Samples one random tree with node count in [min_nodes, max_nodes] and
// assembles it. Returns nullopt when the draw fails sanitization or pose
// range limits.
inline std::optional<SynthSample> sample_synth_molecule(const FragmentVocab& vocab,
                                                        RandomSource& rng, int min_nodes,
                                                        int max_nodes, double max_abs_coord) {
    std::vector<int> with_bp;
    for (int i = kNumControlSymbols; i < vocab.size(); ++i)
        if (!vocab.entry(i).breakpoints.empty()) with_bp.push_back(i);
    if (with_bp.size() < 2) throw Error("vocab-too-small", "need >= 2 fragments with breakpoints");

    int target = static_cast<int>(rng.uniform_int(min_nodes, max_nodes));
    FragmentTree tree;
    struct OpenSite {
        int node;
        int bp;
    };
    std::vector<OpenSite> open;

    auto add_node = [&](int vocab_index, const Vec3& t, const Quaternion& r, int parent,
                        int parent_bp, int child_bp) {
        TreeNode node;
        node.vocab_index = vocab_index;
        node.key = vocab.entry(vocab_index).canonical_key;
        node.translation = t;
        node.rotation = r;
        node.parent = parent;
        node.parent_breakpoint = parent_bp;
        node.child_breakpoint = child_bp;
        node.breakpoint_count = static_cast<int>(vocab.entry(vocab_index).breakpoints.size());
        int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(node);
        if (parent >= 0) tree.nodes[parent].children.push_back(id);
        for (int bp : vocab.entry(vocab_index).breakpoints)
            if (bp != child_bp) open.push_back({id, bp});
        return id;
    };

    int root_index = with_bp[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(with_bp.size()) - 1))];
    tree.root = add_node(root_index, Vec3{}, Quaternion::random_uniform(rng), -1, -1, -1);

    while (static_cast<int>(tree.nodes.size()) < target && !open.empty()) {
        std::size_t si = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(open.size()) - 1));
        OpenSite site = open[si];
        open.erase(open.begin() + static_cast<std::ptrdiff_t>(si));
        const TreeNode& pn = tree.nodes[site.node];
        const Fragment& pf = vocab.entry(pn.vocab_index);
        Vec3 bp_world = pn.rotation.rotate(pf.atoms[site.bp].position) + pn.translation;
        Vec3 dir = pn.rotation.rotate(detail::breakpoint_direction(pf, site.bp));

        int child_index = with_bp[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(with_bp.size()) - 1))];
        const Fragment& cf = vocab.entry(child_index);
        int child_bp = cf.breakpoints[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(cf.breakpoints.size()) - 1))];
        Vec3 cdir = detail::breakpoint_direction(cf, child_bp);
        Quaternion r =
            detail::rotation_between(cdir, dir * -1.0, rng.uniform(0, 2 * 3.14159265358979323846));
        Vec3 child_bp_target = bp_world + dir * 1.5;
        Vec3 t = child_bp_target - r.rotate(cf.atoms[child_bp].position);
        add_node(child_index, t, r, site.node, site.bp, child_bp);
    }
    if (static_cast<int>(tree.nodes.size()) < min_nodes) return std::nullopt;

    // recenter the whole tree on its assembled centroid
    AssemblyResult pre = assemble(tree, vocab);
    Vec3 c = pre.molecule.centroid();
    for (TreeNode& n : tree.nodes) n.translation -= c;
    AssemblyResult fin = assemble(tree, vocab);
    for (const Atom& a : fin.molecule.atoms) {
        if (std::abs(a.position.x) > max_abs_coord || std::abs(a.position.y) > max_abs_coord ||
            std::abs(a.position.z) > max_abs_coord)
            return std::nullopt;
    }
    if (!sanitize(fin.molecule).accepted) return std::nullopt;
    fin.molecule.name = "synth";
    return SynthSample{std::move(fin.molecule), std::move(tree)};
}

inline std::vector<SynthSample> synth_corpus(const FragmentVocab& vocab, std::size_t size,
                                             RandomSource& rng, int min_nodes = 2,
                                             int max_nodes = 8, double max_abs_coord = 12.0) {
    std::vector<SynthSample> out;
    std::size_t attempts = 0, max_attempts = size * 200 + 1000;
    while (out.size() < size && attempts < max_attempts) {
        ++attempts;
        auto s = sample_synth_molecule(vocab, rng, min_nodes, max_nodes, max_abs_coord);
        if (s) {
            s->molecule.name = "synth_" + std::to_string(out.size());
            out.push_back(std::move(*s));
        }
    }
    if (out.size() < size)
        throw Error("synth-failure", "could not synthesize requested corpus size");
    return out;
}

// ---------------------------------------------------------------------------
// Run driver

struct RunParams {
    // sketching
    SketchParams sketch;
    bool ligand_mode = false;
    // generation
    int n_per_shape = 32;
    double top_p = 0.95;
    std::uint64_t seed = 0;
    // scoring (optional)
    std::string scorer;
    double score_threshold = 0.0;
    std::set<std::string> train_keys;
    double pitch = 1.0;  // grid pitch, must match the trained model frame
};

struct RunManifest {
    std::string run_id;
    std::size_t sketched = 0;
    std::size_t generated_valid = 0;
    std::size_t assembled = 0;
    std::size_t sanitized = 0;
    std::size_t deduped = 0;
    std::size_t scored_kept = 0;
    std::size_t dropped_malformed = 0;
    std::size_t unscored = 0;
    std::optional<MetricsReport> report;
};

inline void write_manifest(std::ostream& os, const RunManifest& m) {
    os << "run_id\t" << m.run_id << '\n'
       << "sketched\t" << m.sketched << '\n'
       << "generated_valid\t" << m.generated_valid << '\n'
       << "assembled\t" << m.assembled << '\n'
       << "sanitized\t" << m.sanitized << '\n'
       << "deduped\t" << m.deduped << '\n'
       << "scored_kept\t" << m.scored_kept << '\n'
       << "dropped_malformed\t" << m.dropped_malformed << '\n'
       << "unscored\t" << m.unscored << '\n';
    if (m.report) {
        os << "uniq\t" << m.report->uniq << '\n'
           << "nov\t" << m.report->nov << '\n'
           << "succ\t" << m.report->succ << '\n'
           << "div\t" << m.report->div << '\n'
           << "prod\t" << m.report->prod << '\n'
           << "median_score\t" << m.report->median_score << '\n';
    }
}

// sketch -> generate -> delinearize -> assemble -> sanitize -> dedup ->
// optional score_filter -> metrics; all artifacts persisted under run_dir.
inline RunManifest run_design(const std::vector<VoxelGrid>& shapes, const Shape2Seq& model,
                              const RunParams& params, const std::filesystem::path& run_dir,
                              const FragmentVocab& vocab, const CodecParams& codec_params) {
    namespace fs = std::filesystem;
    fs::create_directories(run_dir / "shapes");
    RunManifest manifest;
    manifest.run_id = run_dir.filename().string();
    manifest.sketched = shapes.size();

    std::ofstream seq_out(run_dir / "sequences.txt");
    std::ofstream rej_out(run_dir / "rejected.tsv");
    std::vector<Molecule> sanitized;
    RandomSource master(params.seed);
    for (std::size_t si = 0; si < shapes.size(); ++si) {
        {
            std::ofstream vf(run_dir / "shapes" / ("shape_" + std::to_string(si) + ".voxl"));
            write_voxl(vf, shapes[si]);
        }
        RandomSource rng = master.split(si);
        auto gen = model.generate(shapes[si], params.n_per_shape, params.top_p, rng);
        manifest.dropped_malformed += static_cast<std::size_t>(gen.dropped_malformed);
        manifest.generated_valid += gen.sequences.size();
        for (const TokenSequence& seq : gen.sequences) {
            seq_out << si << '\t' << sequence_to_text(seq) << '\n';
            try {
                FragmentTree tree = delinearize(seq, vocab, codec_params);
                AssemblyResult ar = assemble(tree, vocab);
                ++manifest.assembled;
                SanitizeResult sr = sanitize(ar.molecule);
                if (sr.accepted) {
                    ar.molecule.name = "gen_" + std::to_string(si) + "_" +
                                       std::to_string(sanitized.size());
                    sanitized.push_back(std::move(ar.molecule));
                } else {
                    rej_out << si << '\t' << sr.reason << '\n';
                }
            } catch (const Error& e) {
                rej_out << si << '\t' << e.code() << '\n';
            }
        }
    }
    manifest.sanitized = sanitized.size();
    std::vector<Molecule> unique_mols = dedup(sanitized);
    manifest.deduped = unique_mols.size();
    {
        std::ofstream mol_out(run_dir / "molecules.sdf");
        write_sdf(mol_out, unique_mols);
    }
    std::vector<double> scores;
    std::vector<Molecule>* final_set = &unique_mols;
    std::vector<Molecule> kept;
    if (!params.scorer.empty() && !unique_mols.empty()) {
        ScoreResult sr = score_filter(unique_mols, params.scorer, params.score_threshold);
        manifest.scored_kept = sr.kept.size();
        manifest.unscored = static_cast<std::size_t>(sr.unscored);
        scores = sr.all_scores;
        kept = std::move(sr.kept);
        final_set = &kept;
        std::ofstream kept_out(run_dir / "molecules_kept.sdf");
        write_sdf(kept_out, kept);
    } else {
        manifest.scored_kept = unique_mols.size();
    }
    if (!unique_mols.empty()) {
        manifest.report =
            metrics(unique_mols, scores, params.train_keys, params.score_threshold);
    }
    (void)final_set;
    {
        std::ofstream mf(run_dir / "manifest.tsv");
        write_manifest(mf, manifest);
    }
    return manifest;
}

} // namespace desert
