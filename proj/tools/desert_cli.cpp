// Command-line front end for the shape-to-molecule pipeline.
//
// Subcommands: corpus, train, sketch, generate, assemble, eval.
// Options may also come from a key=value config file (--config); explicit
// flags override it. The DESERT_SEED environment variable overrides the
// default master seed of any subcommand.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "desert/assembler.hpp"
#include "desert/chem.hpp"
#include "desert/codec.hpp"
#include "desert/geom.hpp"
#include "desert/model.hpp"
#include "desert/pipeline.hpp"
#include "desert/sketch.hpp"

namespace fs = std::filesystem;
using namespace desert;

namespace {

GridSpec make_grid(int extent, double pitch) {
    return GridSpec::centered({0, 0, 0}, pitch, extent);
}

std::map<std::string, std::string> read_meta(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("io-error", "cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

std::vector<Molecule> read_sdf_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("io-error", "cannot open " + path);
    return read_sdf(is);
}

// Regenerates the synthetic training set recorded by `corpus` (the corpus is
// a deterministic function of the vocabulary and the sampling parameters).
std::vector<SynthSample> corpus_samples(const fs::path& dir, FragmentVocab& vocab) {
    vocab = load_vocab(dir / "vocab");
    auto meta = read_meta(dir / "corpus_meta.txt");
    RandomSource rng(std::stoull(meta.at("seed")));
    return synth_corpus(vocab, std::stoull(meta.at("size")), rng, std::stoi(meta.at("min_nodes")),
                        std::stoi(meta.at("max_nodes")), std::stod(meta.at("max_abs_coord")));
}

std::vector<VoxelGrid> read_shapes(const std::vector<std::string>& paths) {
    std::vector<std::string> files;
    for (const std::string& p : paths) {
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p))
                if (e.path().extension() == ".voxl") files.push_back(e.path().string());
        } else {
            files.push_back(p);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("no-shapes", "no .voxl shape files found");
    std::vector<VoxelGrid> shapes;
    for (const std::string& f : files) {
        std::ifstream is(f);
        if (!is) throw Error("io-error", "cannot open " + f);
        shapes.push_back(read_voxl(is));
    }
    return shapes;
}

int cmd_corpus(const std::string& out, std::size_t size, int min_nodes, int max_nodes,
               std::size_t vocab_max, double max_abs, std::uint64_t seed) {
    fs::create_directories(out);
    std::vector<Molecule> base = builtin_base_set();
    FragmentVocab vocab = build_vocab(base, RuleTable{}, vocab_max);
    save_vocab(vocab, fs::path(out) / "vocab");

    RandomSource rng(seed);
    std::vector<SynthSample> samples = synth_corpus(vocab, size, rng, min_nodes, max_nodes, max_abs);
    {
        std::vector<Molecule> mols;
        mols.reserve(samples.size());
        for (const SynthSample& s : samples) mols.push_back(s.molecule);
        std::ofstream os(fs::path(out) / "corpus.sdf");
        write_sdf(os, mols);
    }
    {
        std::ofstream os(fs::path(out) / "corpus_meta.txt");
        os << "seed=" << seed << "\nsize=" << size << "\nmin_nodes=" << min_nodes
           << "\nmax_nodes=" << max_nodes << "\nmax_abs_coord=" << max_abs << "\n";
    }
    {
        std::ofstream os(fs::path(out) / "train_keys.txt");
        std::set<std::string> keys;
        for (const SynthSample& s : samples) keys.insert(molecule_key(s.molecule));
        for (const std::string& k : keys) os << k << '\n';
    }
    std::cout << "corpus: " << samples.size() << " molecules, vocabulary "
              << vocab.size() - kNumControlSymbols << " fragments -> " << out << '\n';
    return 0;
}

int cmd_train(const std::string& corpus_dir, const std::string& out, const ModelConfig& cfg_in,
              const TrainConfig& tc_in, std::uint64_t seed, const std::string& loss_curve) {
    FragmentVocab vocab;
    std::vector<SynthSample> samples = corpus_samples(corpus_dir, vocab);
    ModelConfig cfg = cfg_in;
    cfg.vocab_size = vocab.size();
    cfg.validate();

    GridSpec spec = make_grid(cfg.grid_extent, 1.0);
    CodecParams codec{static_cast<double>(cfg.grid_extent), cfg.b_t, cfg.b_r};

    std::vector<TrainSample> corpus;
    corpus.reserve(samples.size());
    for (SynthSample& s : samples) corpus.push_back({std::move(s.molecule), std::move(s.tree)});

    RandomSource rng(seed);
    Shape2Seq model(cfg, rng);
    TrainConfig tc = tc_in;
    tc.checkpoint_path = out;
    tc.loss_curve_path = loss_curve;
    TrainLog log = train(model, corpus, spec, vocab, codec, tc, rng);
    std::cout << "train: " << tc.steps << " steps, loss " << log.initial_loss << " -> "
              << log.final_loss << ", checkpoint " << out << '\n';
    return 0;
}

int cmd_sketch(const std::string& pocket_path, const std::string& ligand_path,
               const std::string& out, SketchParams params, int extent, double pitch) {
    fs::create_directories(out);
    GridSpec spec = make_grid(extent, pitch);
    int written = 0;
    if (!ligand_path.empty()) {
        std::vector<Molecule> ligands = read_sdf_file(ligand_path);
        for (Molecule& m : ligands) {
            Vec3 c = m.centroid();
            for (Atom& a : m.atoms) a.position = a.position - c;
            VoxelGrid g = sketch_from_ligand(m, spec);
            std::ofstream os(fs::path(out) / ("shape_" + std::to_string(written) + ".voxl"));
            write_voxl(os, g);
            ++written;
        }
        std::cout << "sketch: " << written << " ligand shapes -> " << out << '\n';
    } else {
        std::vector<Molecule> prot = read_sdf_file(pocket_path);
        if (prot.empty()) throw Error("empty-input", "pocket file holds no molecules");
        PocketShape pocket = pocket_from_atoms(prot[0], spec);
        SketchResult res = sketch_from_pocket(pocket, params);
        for (const SketchedShape& s : res.shapes) {
            std::ofstream os(fs::path(out) / ("shape_" + std::to_string(written) + ".voxl"));
            write_voxl(os, s.grid);
            ++written;
        }
        std::cout << "sketch: " << written << " shapes accepted, " << res.failed_shapes
                  << " failed -> " << out << '\n';
    }
    return 0;
}

int cmd_generate(const std::string& checkpoint, const std::vector<std::string>& shape_paths,
                 const std::string& vocab_dir, const std::string& out, int n, double top_p,
                 std::uint64_t seed) {
    Shape2Seq model = Shape2Seq::load(checkpoint);
    FragmentVocab vocab = load_vocab(vocab_dir);
    if (vocab.size() != model.config().vocab_size)
        throw Error("vocab-error", "vocabulary size does not match the checkpoint");
    std::vector<VoxelGrid> shapes = read_shapes(shape_paths);
    for (const VoxelGrid& g : shapes)
        if (g.extent() != model.config().grid_extent)
            throw Error("shape-mismatch", "shape extent does not match the checkpoint");

    CodecParams codec{static_cast<double>(model.config().grid_extent), model.config().b_t,
                      model.config().b_r};
    RunParams params;
    params.n_per_shape = n;
    params.top_p = top_p;
    params.seed = seed;
    RunManifest m = run_design(shapes, model, params, out, vocab, codec);
    write_manifest(std::cout, m);
    return 0;
}

int cmd_assemble(const std::string& sequences, const std::string& vocab_dir,
                 const std::string& out, int extent, int bt, int br) {
    FragmentVocab vocab = load_vocab(vocab_dir);
    CodecParams codec{static_cast<double>(extent), bt, br};
    std::ifstream is(sequences);
    if (!is) throw Error("io-error", "cannot open " + sequences);
    std::vector<Molecule> accepted;
    int total = 0, rejected = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        // lines may carry a leading "<shape index>\t" prefix
        auto tab = line.find('\t');
        std::string text = tab == std::string::npos ? line : line.substr(tab + 1);
        ++total;
        try {
            TokenSequence seq = sequence_from_text(text);
            FragmentTree tree = delinearize(seq, vocab, codec);
            AssemblyResult ar = assemble(tree, vocab);
            if (sanitize(ar.molecule).accepted) {
                ar.molecule.name = "assembled_" + std::to_string(accepted.size());
                accepted.push_back(std::move(ar.molecule));
            } else {
                ++rejected;
            }
        } catch (const Error&) {
            ++rejected;
        }
    }
    std::ofstream os(out);
    write_sdf(os, accepted);
    std::cout << "assemble: " << accepted.size() << "/" << total << " accepted (" << rejected
              << " rejected) -> " << out << '\n';
    return 0;
}

int cmd_eval(const std::string& molecules, const std::string& scorer, double threshold,
             const std::string& train_keys_path, const std::string& histogram) {
    std::vector<Molecule> mols = read_sdf_file(molecules);
    std::set<std::string> train_keys;
    if (!train_keys_path.empty()) {
        std::ifstream is(train_keys_path);
        if (!is) throw Error("io-error", "cannot open " + train_keys_path);
        std::string k;
        while (std::getline(is, k))
            if (!k.empty()) train_keys.insert(k);
    }
    std::vector<double> scores;
    if (!scorer.empty()) {
        ScoreResult r = score_filter(mols, scorer, threshold);
        if (r.unscored > 0) {
            std::cerr << "eval: scorer failed; " << r.unscored << " molecules unscored\n";
            return 1;
        }
        scores = r.all_scores;
    }
    MetricsReport rep = metrics(mols, scores, train_keys, threshold);
    std::cout << "total\t" << rep.total << "\nunique\t" << rep.unique_count << "\nuniq\t"
              << rep.uniq << "\nnov\t" << rep.nov << "\nsucc\t" << rep.succ << "\ndiv\t" << rep.div
              << "\nprod\t" << rep.prod << "\nmedian_score\t" << rep.median_score << '\n';
    if (!histogram.empty()) {
        std::ofstream os(histogram);
        os << "index,score\n";
        for (std::size_t i = 0; i < scores.size(); ++i) os << i << ',' << scores[i] << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fragment-based 3D molecule design pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file (flags override it)");

    // corpus ---------------------------------------------------------------
    auto* corpus = app.add_subcommand("corpus", "build a fragment vocabulary and synthetic corpus");
    std::string c_out = "corpus_out";
    std::size_t c_size = 500, c_vocab_max = 256;
    int c_min = 2, c_max = 8;
    double c_abs = 12.0;
    std::uint64_t c_seed = 0;
    corpus->add_option("--out", c_out, "output directory");
    corpus->add_option("--size", c_size, "number of molecules");
    corpus->add_option("--min-nodes", c_min, "minimum fragments per molecule");
    corpus->add_option("--max-nodes", c_max, "maximum fragments per molecule");
    corpus->add_option("--vocab-max", c_vocab_max, "vocabulary size cap");
    corpus->add_option("--max-abs-coord", c_abs, "coordinate bound for accepted molecules");
    corpus->add_option("--seed", c_seed, "master RNG seed")->envname("DESERT_SEED");

    // train ----------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a shape-to-sequence model");
    std::string t_corpus, t_out = "model.ckpt", t_curve;
    ModelConfig t_cfg;
    TrainConfig t_tc;
    std::uint64_t t_seed = 0;
    train_cmd->add_option("--corpus", t_corpus, "corpus directory from `corpus`")->required();
    train_cmd->add_option("--out", t_out, "checkpoint path");
    train_cmd->add_option("--steps", t_tc.steps, "optimizer steps");
    train_cmd->add_option("--batch-size", t_tc.batch_size, "batch size");
    train_cmd->add_option("--dim", t_cfg.dim, "model width");
    train_cmd->add_option("--enc-layers", t_cfg.layers_enc, "encoder layers");
    train_cmd->add_option("--dec-layers", t_cfg.layers_dec, "decoder layers");
    train_cmd->add_option("--heads", t_cfg.heads, "attention heads");
    train_cmd->add_option("--patch-edge", t_cfg.patch_edge, "encoder patch edge (cells)");
    train_cmd->add_option("--grid-extent", t_cfg.grid_extent, "grid cells per axis");
    train_cmd->add_option("--max-len", t_cfg.max_len, "maximum sequence length");
    train_cmd->add_option("--dropout", t_cfg.dropout, "dropout rate");
    train_cmd->add_option("--trans-bins", t_cfg.b_t, "translation bins");
    train_cmd->add_option("--rot-bins", t_cfg.b_r, "rotation bins");
    train_cmd->add_option("--lr", t_tc.adamw.lr, "peak learning rate");
    train_cmd->add_option("--warmup", t_tc.adamw.warmup_steps, "warmup steps");
    train_cmd->add_option("--weight-decay", t_tc.adamw.weight_decay, "decoupled weight decay");
    train_cmd->add_option("--voxel-eps", t_tc.voxel_eps, "training-time voxel noise");
    train_cmd->add_flag("!--no-augment", t_tc.augment_enabled, "disable rigid augmentation");
    train_cmd->add_option("--log-every", t_tc.log_every, "loss log interval");
    train_cmd->add_option("--loss-curve", t_curve, "loss curve CSV path");
    train_cmd->add_option("--seed", t_seed, "master RNG seed")->envname("DESERT_SEED");

    // sketch ---------------------------------------------------------------
    auto* sketch_cmd = app.add_subcommand("sketch", "sketch molecule-sized shapes");
    std::string s_pocket, s_ligand, s_out = "shapes";
    SketchParams s_params;
    int s_extent = 32;
    double s_pitch = 1.0;
    std::uint64_t s_seed = 0;
    auto* po = sketch_cmd->add_option("--pocket", s_pocket, "pocket atoms (SDF)");
    auto* lo = sketch_cmd->add_option("--ligand", s_ligand, "reference ligand (SDF)");
    po->excludes(lo);
    sketch_cmd->add_option("--out", s_out, "output directory for .voxl shapes");
    sketch_cmd->add_option("--n-shapes", s_params.n_shapes, "shapes to sample");
    sketch_cmd->add_option("--vmin", s_params.v_min, "minimum volume (A^3)");
    sketch_cmd->add_option("--vmax", s_params.v_max, "maximum volume (A^3)");
    sketch_cmd->add_option("--max-attempts", s_params.max_attempts, "attempts per shape");
    sketch_cmd->add_option("--extent", s_extent, "grid cells per axis");
    sketch_cmd->add_option("--pitch", s_pitch, "grid pitch (A)");
    sketch_cmd->add_option("--seed", s_seed, "master RNG seed")->envname("DESERT_SEED");

    // generate ---------------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "generate molecules for sketched shapes");
    std::string g_ckpt, g_vocab, g_out = "run";
    std::vector<std::string> g_shapes;
    int g_n = 32;
    double g_top_p = 0.95;
    std::uint64_t g_seed = 0;
    gen->add_option("--checkpoint", g_ckpt, "model checkpoint")->required();
    gen->add_option("--shapes", g_shapes, "shape .voxl files or directories")->required();
    gen->add_option("--vocab", g_vocab, "vocabulary directory")->required();
    gen->add_option("--out", g_out, "run output directory");
    gen->add_option("--n", g_n, "samples per shape");
    gen->add_option("--top-p", g_top_p, "nucleus sampling threshold");
    gen->add_option("--seed", g_seed, "master RNG seed")->envname("DESERT_SEED");

    // assemble ---------------------------------------------------------------
    auto* asm_cmd = app.add_subcommand("assemble", "assemble token sequences into molecules");
    std::string a_seq, a_vocab, a_out = "molecules.sdf";
    int a_extent = 32, a_bt = 64, a_br = 64;
    asm_cmd->add_option("--sequences", a_seq, "token sequence text file")->required();
    asm_cmd->add_option("--vocab", a_vocab, "vocabulary directory")->required();
    asm_cmd->add_option("--out", a_out, "output SDF");
    asm_cmd->add_option("--extent", a_extent, "grid cells per axis");
    asm_cmd->add_option("--trans-bins", a_bt, "translation bins");
    asm_cmd->add_option("--rot-bins", a_br, "rotation bins");

    // eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "score and report metrics for an SDF");
    std::string e_mols, e_scorer, e_keys, e_hist;
    double e_threshold = 0.0;
    ev->add_option("--molecules", e_mols, "molecules (SDF)")->required();
    ev->add_option("--scorer", e_scorer, "scorer command (SDF on stdin, scores on stdout)");
    ev->add_option("--threshold", e_threshold, "success threshold (score <= passes)")->required();
    ev->add_option("--train-keys", e_keys, "training molecule keys, one per line");
    ev->add_option("--plot-histogram", e_hist, "write score distribution CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (corpus->parsed())
            return cmd_corpus(c_out, c_size, c_min, c_max, c_vocab_max, c_abs, c_seed);
        if (train_cmd->parsed()) return cmd_train(t_corpus, t_out, t_cfg, t_tc, t_seed, t_curve);
        if (sketch_cmd->parsed()) {
            if (s_pocket.empty() && s_ligand.empty())
                throw Error("bad-params", "sketch needs --pocket or --ligand");
            s_params.seed = s_seed;
            return cmd_sketch(s_pocket, s_ligand, s_out, s_params, s_extent, s_pitch);
        }
        if (gen->parsed()) return cmd_generate(g_ckpt, g_shapes, g_vocab, g_out, g_n, g_top_p, g_seed);
        if (asm_cmd->parsed()) return cmd_assemble(a_seq, a_vocab, a_out, a_extent, a_bt, a_br);
        if (ev->parsed()) return cmd_eval(e_mols, e_scorer, e_threshold, e_keys, e_hist);
    } catch (const Error& e) {
        std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
