#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "desert/codec.hpp"
#include "test_helpers.hpp"

using namespace desert;

namespace {

Molecule benzene() {
    Molecule m;
    m.name = "benzene";
    for (int i = 0; i < 6; ++i) {
        double a = i * 3.14159265358979323846 / 3.0;
        m.atoms.push_back({"C", {1.39 * std::cos(a), 1.39 * std::sin(a), 0.0}, i});
    }
    for (int i = 0; i < 6; ++i) m.bonds.push_back({i, (i + 1) % 6, BondOrder::Aromatic});
    mark_ring_bonds(m);
    return m;
}

// ring with three substituents: methyl, ethyl, and amino
Molecule branched() {
    Molecule m = benzene();
    m.name = "branched";
    m.atoms.push_back({"C", {2.9, 0.0, 0.0}, 6});
    m.bonds.push_back({0, 6, BondOrder::Single});
    m.atoms.push_back({"C", {-1.45, 2.5, 0.0}, 7});
    m.atoms.push_back({"C", {-2.2, 3.8, 0.0}, 8});
    m.bonds.push_back({2, 7, BondOrder::Single});
    m.bonds.push_back({7, 8, BondOrder::Single});
    m.atoms.push_back({"N", {-1.45, -2.5, 0.0}, 9});
    m.bonds.push_back({4, 9, BondOrder::Single});
    mark_ring_bonds(m);
    return m;
}

Molecule toluene() {
    Molecule m = benzene();
    m.name = "toluene";
    m.atoms.push_back({"C", {2.9, 0.0, 0.0}, 6});
    m.bonds.push_back({0, 6, BondOrder::Single});
    mark_ring_bonds(m);
    return m;
}

FragmentVocab vocab_for(const std::vector<Molecule>& mols) {
    return build_vocab(mols, RuleTable{}, 1000);
}

} // namespace

TEST_CASE("translation bins: hand-computed values") {
    const double L = 32.0;
    const int b = 64;
    CHECK(discretize_translation({0, 0, 0}, L, b) == std::array<int, 3>{32, 32, 32});
    CHECK(discretize_translation({-16.0, 0, 0}, L, b)[0] == 0);
    CHECK(discretize_translation({15.99, 0, 0}, L, b)[0] == 63);
    CHECK(discretize_translation({-0.25, 0.25, 0}, L, b)[0] == 31);
    CHECK(discretize_translation({-0.25, 0.25, 0}, L, b)[1] == 32);
    CHECK_THROWS_AS(discretize_translation({16.0, 0, 0}, L, b), Error);
    CHECK_THROWS_AS(discretize_translation({0, -16.01, 0}, L, b), Error);
}

TEST_CASE("translation roundtrip stays within half a bin") {
    const double L = 32.0;
    const int b = 64;
    const double half = 0.5 * L / b;
    RandomSource rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        Vec3 p{rng.uniform(-16, 15.999), rng.uniform(-16, 15.999), rng.uniform(-16, 15.999)};
        auto idx = discretize_translation(p, L, b);
        Vec3 back = undiscretize_translation(idx, L, b);
        CHECK(std::abs(back.x - p.x) <= half + 1e-12);
        CHECK(std::abs(back.y - p.y) <= half + 1e-12);
        CHECK(std::abs(back.z - p.z) <= half + 1e-12);
        // bin centers are fixed points
        CHECK(discretize_translation(back, L, b) == idx);
    }
}

TEST_CASE("rotation bins: canonicalization and bounds") {
    const int b = 64;
    auto id = discretize_rotation(Quaternion::identity(), b);
    CHECK(id == std::array<int, 4>{63, 32, 32, 32});

    RandomSource rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        Quaternion q = Quaternion::random_uniform(rng);
        Quaternion neg{-q.w, -q.x, -q.y, -q.z};
        CHECK(discretize_rotation(q, b) == discretize_rotation(neg, b));
        for (int c : discretize_rotation(q, b)) {
            CHECK(c >= 0);
            CHECK(c < b);
        }
        // reconstruction is a nearby rotation
        Quaternion back = undiscretize_rotation(discretize_rotation(q, b), b);
        CHECK(back.angle_to(q) < 0.1);
    }
    CHECK_THROWS_AS(discretize_rotation(Quaternion{2, 0, 0, 0}, b), Error);
}

TEST_CASE("marker balance checks") {
    TokenSequence ok{Token::control(TOK_BOB), Token::control(TOK_EOB)};
    CHECK(markers_balanced(ok));
    TokenSequence nested{Token::control(TOK_BOB), Token::control(TOK_BOB),
                         Token::control(TOK_EOB), Token::control(TOK_EOB)};
    CHECK(markers_balanced(nested));
    TokenSequence open{Token::control(TOK_BOB)};
    CHECK_FALSE(markers_balanced(open));
    TokenSequence crossed{Token::control(TOK_EOB), Token::control(TOK_BOB)};
    CHECK_FALSE(markers_balanced(crossed));
}

TEST_CASE("tree construction: chain roots at the smallest-key leaf") {
    Molecule t = toluene();
    FragmentationResult fr = fragment(t);
    FragmentTree tree = build_tree(fr.fragments, fr.cut_bonds);
    REQUIRE(tree.nodes.size() == 2);
    // both fragments have degree 1; root key must be the smaller
    const std::string& rk = tree.nodes[tree.root].key;
    for (const Fragment& f : fr.fragments) CHECK(rk <= f.canonical_key);
    CHECK(tree.nodes[tree.root].parent == -1);
    REQUIRE(tree.nodes[tree.root].children.size() == 1);
    int child = tree.nodes[tree.root].children[0];
    CHECK(tree.nodes[child].parent == tree.root);
    CHECK(tree.nodes[child].parent_breakpoint >= 0);
    CHECK(tree.nodes[child].child_breakpoint >= 0);
}

TEST_CASE("tree construction rejects non-tree cut structures") {
    Molecule t = toluene();
    FragmentationResult fr = fragment(t);
    auto extra = fr.cut_bonds;
    extra.push_back(extra[0]);
    CHECK_THROWS_AS(build_tree(fr.fragments, extra), Error);
    CHECK_THROWS_AS(build_tree({}, {}), Error);
}

TEST_CASE("linearize: chain gives no branch markers, branches are wrapped") {
    FragmentVocab vocab = vocab_for({toluene(), branched()});

    TokenSequence chain_seq = encode_molecule(toluene(), vocab);
    REQUIRE(chain_seq.size() == 4);  // BOS F F EOS
    CHECK(chain_seq.front().symbol == TOK_BOS);
    CHECK(chain_seq.back().symbol == TOK_EOS);
    CHECK(chain_seq[1].is_fragment);
    CHECK(chain_seq[2].is_fragment);

    // branched(): ring with 3 substituents -> tree rooted at a leaf, the ring
    // node has 2 remaining children wrapped in markers
    TokenSequence bseq = encode_molecule(branched(), vocab);
    int bob = 0, eob = 0, frags = 0;
    for (const Token& t : bseq) {
        if (t.is_fragment) ++frags;
        else if (t.symbol == TOK_BOB) ++bob;
        else if (t.symbol == TOK_EOB) ++eob;
    }
    CHECK(frags == 4);
    CHECK(bob == 2);
    CHECK(eob == 2);
    CHECK(markers_balanced(bseq));
}

TEST_CASE("delinearize inverts linearize") {
    FragmentVocab vocab = vocab_for({toluene(), branched()});
    CodecParams params;
    for (const Molecule& m : {toluene(), branched()}) {
        FragmentationResult fr = fragment(m);
        FragmentTree tree = build_tree(fr.fragments, fr.cut_bonds);
        TokenSequence seq = linearize(tree, vocab, params);
        FragmentTree back = delinearize(seq, vocab, params);
        REQUIRE(back.nodes.size() == tree.nodes.size());

        // identical shape, keys and child order; poses at bin centers
        std::function<void(int, int)> walk = [&](int ia, int ib) {
            const TreeNode& na = tree.nodes[ia];
            const TreeNode& nb = back.nodes[ib];
            REQUIRE(na.key == nb.key);
            Vec3 d = na.translation - nb.translation;
            CHECK(std::abs(d.x) <= 0.25 + 1e-12);
            CHECK(std::abs(d.y) <= 0.25 + 1e-12);
            CHECK(std::abs(d.z) <= 0.25 + 1e-12);
            CHECK(na.rotation.angle_to(nb.rotation) < 0.1);
            REQUIRE(na.children.size() == nb.children.size());
            for (std::size_t i = 0; i < na.children.size(); ++i)
                walk(na.children[i], nb.children[i]);
        };
        walk(tree.root, back.root);

        // a second pass is token-stable on structure and translation bins
        TokenSequence seq2 = linearize(back, vocab, params);
        REQUIRE(seq2.size() == seq.size());
        for (std::size_t i = 0; i < seq.size(); ++i) {
            CHECK(seq2[i].is_fragment == seq[i].is_fragment);
            CHECK(seq2[i].symbol == seq[i].symbol);
            CHECK(seq2[i].pc == seq[i].pc);
            for (int c = 0; c < 4; ++c)
                CHECK(std::abs(seq2[i].rc[c] - seq[i].rc[c]) <= 1);
        }
    }
}

TEST_CASE("hand-built tree with bin-center poses roundtrips exactly") {
    FragmentVocab vocab = vocab_for({toluene()});
    CodecParams params;
    FragmentTree tree;
    tree.nodes.resize(3);
    tree.root = 0;
    const int ring = kNumControlSymbols, other = kNumControlSymbols + 1;
    int keys[3] = {other, ring, other};
    int parents[3] = {-1, 0, 1};
    for (int i = 0; i < 3; ++i) {
        TreeNode& n = tree.nodes[i];
        n.vocab_index = keys[i];
        n.key = vocab.entry(keys[i]).canonical_key;
        n.translation = undiscretize_translation({30 + i, 32, 34}, params.max_translation,
                                                 params.translation_bins);
        n.rotation = Quaternion::identity();
        n.parent = parents[i];
        if (i > 0) tree.nodes[i - 1].children.push_back(i);
    }
    TokenSequence seq = linearize(tree, vocab, params);
    FragmentTree back = delinearize(seq, vocab, params);
    CHECK(testing::trees_structurally_equal(tree, back, params));
}

TEST_CASE("delinearize rejects malformed sequences") {
    FragmentVocab vocab = vocab_for({toluene()});
    Token f = Token::fragment_token(kNumControlSymbols, {32, 32, 32}, {63, 32, 32, 32});

    CHECK_THROWS_AS(delinearize({}, vocab), Error);
    CHECK_THROWS_AS(delinearize({f, Token::control(TOK_EOS)}, vocab), Error);
    CHECK_THROWS_AS(delinearize({Token::control(TOK_BOS), f}, vocab), Error);
    // unbalanced markers
    CHECK_THROWS_AS(delinearize({Token::control(TOK_BOS), f, Token::control(TOK_BOB),
                                 Token::control(TOK_EOS)},
                                vocab),
                    Error);
    // interior BOS
    CHECK_THROWS_AS(delinearize({Token::control(TOK_BOS), f, Token::control(TOK_BOS),
                                 Token::control(TOK_EOS)},
                                vocab),
                    Error);
    // vocab index out of range
    Token bad = Token::fragment_token(vocab.size(), {32, 32, 32}, {63, 32, 32, 32});
    CHECK_THROWS_AS(delinearize({Token::control(TOK_BOS), bad, Token::control(TOK_EOS)}, vocab),
                    Error);
    // no fragments at all
    CHECK_THROWS_AS(delinearize({Token::control(TOK_BOS), Token::control(TOK_EOS)}, vocab), Error);
    // two roots: a fragment at top level after a closed branch-scoped root
    CHECK_THROWS_AS(delinearize({Token::control(TOK_BOS), Token::control(TOK_BOB), f,
                                 Token::control(TOK_EOB), f, Token::control(TOK_EOS)},
                                vocab),
                    Error);
}

TEST_CASE("sequence text form roundtrips") {
    FragmentVocab vocab = vocab_for({toluene(), branched()});
    TokenSequence seq = encode_molecule(branched(), vocab);
    std::string text = sequence_to_text(seq);
    TokenSequence back = sequence_from_text(text);
    REQUIRE(back.size() == seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        CHECK(back[i].is_fragment == seq[i].is_fragment);
        CHECK(back[i].symbol == seq[i].symbol);
        if (seq[i].is_fragment) {
            CHECK(back[i].pc == seq[i].pc);
            CHECK(back[i].rc == seq[i].rc);
        }
    }
    CHECK_THROWS_AS(sequence_from_text("WAT"), Error);
    CHECK_THROWS_AS(sequence_from_text("F:1:2,3:4"), Error);
}
