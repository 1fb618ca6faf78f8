#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "desert/pipeline.hpp"
#include "test_helpers.hpp"

using namespace desert;

namespace {

namespace fs = std::filesystem;

// writes a scorer script echoing fixed scores (one per input record)
std::string make_scorer(const std::string& name, const std::string& body) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream os(p);
    os << "#!/bin/sh\n" << body;
    os.close();
    fs::permissions(p, fs::perms::owner_all, fs::perm_options::add);
    return p.string();
}

} // namespace

TEST_CASE("built-in base set is usable") {
    std::vector<Molecule> base = builtin_base_set();
    CHECK(base.size() >= 20);
    for (const Molecule& m : base) {
        CHECK(m.connected());
        CHECK(sanitize(m).accepted);
    }
    FragmentVocab vocab = build_vocab(base, RuleTable{}, 10000);
    CHECK(vocab.size() - kNumControlSymbols >= 20);
}

TEST_CASE("dedup keeps first occurrence and is idempotent") {
    std::vector<Molecule> base = builtin_base_set();
    std::vector<Molecule> with_dupes;
    for (int rep = 0; rep < 3; ++rep)
        for (std::size_t i = 0; i < 4; ++i) with_dupes.push_back(base[i]);
    with_dupes[4].name = "copy";  // same graph, different name

    std::vector<Molecule> unique_mols = dedup(with_dupes);
    REQUIRE(unique_mols.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(unique_mols[i].name == base[i].name);

    std::vector<Molecule> again = dedup(unique_mols);
    REQUIRE(again.size() == unique_mols.size());
    for (std::size_t i = 0; i < again.size(); ++i)
        CHECK(molecule_key(again[i]) == molecule_key(unique_mols[i]));

    CHECK(dedup({}).empty());
}

TEST_CASE("scorer subprocess: protocol and failure modes") {
    std::vector<Molecule> base = builtin_base_set();
    std::vector<Molecule> mols(base.begin(), base.begin() + 3);

    SECTION("well-behaved scorer") {
        // score = number of lines divided by 100: deterministic per record count
        std::string cmd = make_scorer("desert_ok_scorer.sh",
                                      "while read -r line; do\n"
                                      "  case \"$line\" in \\$\\$\\$\\$*) echo 0.25;; esac\n"
                                      "done\n");
        std::vector<double> scores = run_scorer(cmd, mols);
        REQUIRE(scores.size() == 3);
        for (double s : scores) CHECK(s == Catch::Approx(0.25));
        fs::remove(cmd);
    }
    SECTION("nonzero exit is a scorer failure, not fatal") {
        std::string cmd = make_scorer("desert_fail_scorer.sh", "exit 3\n");
        CHECK_THROWS_AS(run_scorer(cmd, mols), Error);
        ScoreResult r = score_filter(mols, cmd, 0.5);
        CHECK(r.kept.empty());
        CHECK(r.unscored == 3);
        fs::remove(cmd);
    }
    SECTION("wrong score count is a protocol error and propagates") {
        std::string cmd = make_scorer("desert_short_scorer.sh", "cat > /dev/null\necho 0.5\n");
        CHECK_THROWS_AS(run_scorer(cmd, mols), Error);
        CHECK_THROWS_AS(score_filter(mols, cmd, 0.5), Error);
        fs::remove(cmd);
    }
    SECTION("threshold filtering keeps low scores") {
        std::string cmd = make_scorer("desert_seq_scorer.sh",
                                      "cat > /dev/null\necho 0.1\necho 0.9\necho 0.3\n");
        ScoreResult r = score_filter(mols, cmd, 0.5);
        REQUIRE(r.kept.size() == 2);
        CHECK(r.kept_scores == std::vector<double>{0.1, 0.3});
        CHECK(r.all_scores.size() == 3);
        CHECK(r.unscored == 0);
        fs::remove(cmd);
    }
}

TEST_CASE("metrics match hand-computed values") {
    std::vector<Molecule> base = builtin_base_set();
    // 4 molecules: one duplicated -> uniq = 3/4
    std::vector<Molecule> gen{base[0], base[1], base[2], base[0]};
    // train keys contain one of the three unique keys -> nov = 2/3
    std::set<std::string> train_keys{molecule_key(base[1])};
    // scores 0.1, 0.6, 0.4, 0.2 with threshold 0.45 -> succ = 3/4
    std::vector<double> scores{0.1, 0.6, 0.4, 0.2};
    MetricsReport r = metrics(gen, scores, train_keys, 0.45);

    CHECK(r.total == 4);
    CHECK(r.unique_count == 3);
    CHECK(r.uniq == Catch::Approx(3.0 / 4.0));
    CHECK(r.nov == Catch::Approx(2.0 / 3.0));
    CHECK(r.succ == Catch::Approx(3.0 / 4.0));
    CHECK(r.median_score == Catch::Approx((0.2 + 0.4) / 2));

    // diversity oracle: pairwise multiset Jaccard over the three uniques
    auto ms = [&](const Molecule& m) { return detail::fragment_multiset(m, RuleTable{}); };
    double j01 = detail::multiset_jaccard(ms(base[0]), ms(base[1]));
    double j02 = detail::multiset_jaccard(ms(base[0]), ms(base[2]));
    double j12 = detail::multiset_jaccard(ms(base[1]), ms(base[2]));
    double div = 1.0 - (j01 + j02 + j12) / 3.0;
    CHECK(r.div == Catch::Approx(div));
    CHECK(r.prod == Catch::Approx(r.uniq * r.nov * r.succ * r.div));

    CHECK_THROWS_AS(metrics({}, {}, {}, 0.5), Error);
}

TEST_CASE("metrics corner cases") {
    std::vector<Molecule> base = builtin_base_set();
    // single molecule: div defined as 0, uniq = nov = 1 with empty train keys
    MetricsReport one = metrics({base[0]}, {}, {}, 0.5);
    CHECK(one.uniq == 1.0);
    CHECK(one.nov == 1.0);
    CHECK(one.div == 0.0);
    CHECK(one.succ == 0.0);  // nothing scored
    CHECK(one.prod == 0.0);

    // identical copies: div vacuous over one unique molecule
    MetricsReport same = metrics({base[0], base[0], base[0]}, {}, {}, 0.5);
    CHECK(same.uniq == Catch::Approx(1.0 / 3.0));
    CHECK(same.div == 0.0);

    // all molecules known from training -> nov = 0
    std::set<std::string> keys{molecule_key(base[0]), molecule_key(base[1])};
    MetricsReport nov0 = metrics({base[0], base[1]}, {0.1, 0.1}, keys, 0.5);
    CHECK(nov0.nov == 0.0);
    CHECK(nov0.succ == 1.0);
    CHECK(nov0.prod == 0.0);
}

TEST_CASE("multiset jaccard oracle values") {
    std::map<std::string, int> a{{"x", 2}, {"y", 1}};
    std::map<std::string, int> b{{"x", 1}, {"z", 1}};
    // inter = min(2,1) = 1; union = max(2,1) + 1 + 1 = 4
    CHECK(detail::multiset_jaccard(a, b) == Catch::Approx(0.25));
    CHECK(detail::multiset_jaccard(a, a) == Catch::Approx(1.0));
    CHECK(detail::multiset_jaccard({}, {}) == Catch::Approx(1.0));
    CHECK(detail::multiset_jaccard(a, {}) == Catch::Approx(0.0));
}

TEST_CASE("synthetic corpus: samples are consistent and reproducible") {
    std::vector<Molecule> base = builtin_base_set();
    FragmentVocab vocab = build_vocab(base, RuleTable{}, 10000);

    RandomSource rng(5);
    std::vector<SynthSample> corpus = synth_corpus(vocab, 20, rng, 2, 6);
    REQUIRE(corpus.size() == 20);
    for (const SynthSample& s : corpus) {
        CHECK(s.molecule.connected());
        CHECK(sanitize(s.molecule).accepted);
        CHECK(s.tree.nodes.size() >= 2);
        CHECK(s.tree.nodes.size() <= 6);
        // centered near the origin, inside the pose range
        Vec3 c = s.molecule.centroid();
        CHECK(c.norm() < 1e-6);
        for (const Atom& a : s.molecule.atoms) {
            CHECK(std::abs(a.position.x) <= 12.0);
            CHECK(std::abs(a.position.y) <= 12.0);
            CHECK(std::abs(a.position.z) <= 12.0);
        }
        // the tree re-assembles to the same molecule
        AssemblyResult re = assemble(s.tree, vocab);
        REQUIRE(re.molecule.atoms.size() == s.molecule.atoms.size());
        CHECK(testing::graphs_isomorphic(re.molecule, s.molecule));
        // junction bonds are exactly 1.5 A
        for (const FormedBond& fb : re.bonds_formed)
            CHECK(fb.length == Catch::Approx(1.5).margin(1e-6));
    }

    RandomSource rng2(5);
    std::vector<SynthSample> corpus2 = synth_corpus(vocab, 20, rng2, 2, 6);
    REQUIRE(corpus2.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        CHECK(molecule_key(corpus[i].molecule) == molecule_key(corpus2[i].molecule));
}

TEST_CASE("synthetic corpus failure paths") {
    std::vector<Molecule> base = builtin_base_set();
    FragmentVocab tiny = build_vocab({base[0]}, RuleTable{}, 1);
    RandomSource rng(1);
    // a single-entry vocabulary cannot seed tree growth
    CHECK_THROWS_AS(synth_corpus(tiny, 5, rng), Error);
}

TEST_CASE("end-to-end run driver writes artifacts and counts stages") {
    std::vector<Molecule> base = builtin_base_set();
    FragmentVocab vocab = build_vocab(base, RuleTable{}, 10000);
    GridSpec spec = GridSpec::centered({0, 0, 0}, 1.0, 16);
    CodecParams codec{16.0, 16, 16};

    ModelConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.layers_enc = 1;
    cfg.layers_dec = 1;
    cfg.patch_edge = 4;
    cfg.grid_extent = 16;
    cfg.vocab_size = vocab.size();
    cfg.b_t = 16;
    cfg.b_r = 16;
    cfg.max_len = 24;
    cfg.dropout = 0.0;
    RandomSource rng(9);
    Shape2Seq model(cfg, rng);

    std::vector<VoxelGrid> shapes;
    shapes.push_back(voxelize(base[0], spec));
    shapes.push_back(voxelize(base[1], spec));

    RunParams params;
    params.n_per_shape = 4;
    params.top_p = 0.9;
    params.seed = 31;

    fs::path run_dir = fs::temp_directory_path() / "desert_run_test";
    fs::remove_all(run_dir);
    RunManifest m = run_design(shapes, model, params, run_dir, vocab, codec);

    CHECK(m.sketched == 2);
    CHECK(m.generated_valid + m.dropped_malformed == 8);
    CHECK(m.assembled <= m.generated_valid);
    CHECK(m.sanitized <= m.assembled);
    CHECK(m.deduped <= m.sanitized);

    CHECK(fs::exists(run_dir / "shapes" / "shape_0.voxl"));
    CHECK(fs::exists(run_dir / "shapes" / "shape_1.voxl"));
    CHECK(fs::exists(run_dir / "sequences.txt"));
    CHECK(fs::exists(run_dir / "molecules.sdf"));
    CHECK(fs::exists(run_dir / "manifest.tsv"));

    // persisted shapes reload identically
    std::ifstream vf(run_dir / "shapes" / "shape_0.voxl");
    VoxelGrid back = read_voxl(vf);
    CHECK(back == shapes[0]);

    // manifest agrees with the returned struct
    std::ifstream mf(run_dir / "manifest.tsv");
    std::map<std::string, std::string> kv;
    std::string k, v;
    while (mf >> k >> v) kv[k] = v;
    CHECK(kv.at("sketched") == "2");
    CHECK(kv.at("sanitized") == std::to_string(m.sanitized));
    CHECK(kv.at("deduped") == std::to_string(m.deduped));

    // deterministic: same seed, same counts and molecules
    fs::path run_dir2 = fs::temp_directory_path() / "desert_run_test2";
    fs::remove_all(run_dir2);
    RunManifest m2 = run_design(shapes, model, params, run_dir2, vocab, codec);
    CHECK(m2.generated_valid == m.generated_valid);
    CHECK(m2.deduped == m.deduped);
    std::ifstream s1(run_dir / "sequences.txt"), s2(run_dir2 / "sequences.txt");
    std::string t1((std::istreambuf_iterator<char>(s1)), std::istreambuf_iterator<char>());
    std::string t2((std::istreambuf_iterator<char>(s2)), std::istreambuf_iterator<char>());
    CHECK(t1 == t2);

    fs::remove_all(run_dir);
    fs::remove_all(run_dir2);
}
