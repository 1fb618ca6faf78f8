#pragma once

// Shape-to-sequence encoder-decoder: a 3D-patch Transformer encoder over the
// voxel grid and an autoregressive fragment decoder with three output heads
// (fragment index, per-axis translation bins, per-component rotation bins).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "desert/chem.hpp"
#include "desert/codec.hpp"
#include "desert/common.hpp"
#include "desert/geom.hpp"
#include "desert/nn.hpp"

namespace desert {

struct ModelConfig {
    int dim = 128;
    int layers_enc = 4;
    int layers_dec = 4;
    int heads = 4;
    int patch_edge = 4;
    int grid_extent = 32;
    int vocab_size = 0;   // including the 5 control symbols
    int b_t = 64;
    int b_r = 64;
    int max_len = 96;
    double dropout = 0.1;

    int patches_per_axis() const { return grid_extent / patch_edge; }
    int num_patches() const {
        int n = patches_per_axis();
        return n * n * n;
    }
    int patch_cells() const { return patch_edge * patch_edge * patch_edge; }
    int head_dim() const { return dim / heads; }

    void validate() const {
        if (dim % heads != 0) throw Error("bad-config", "dim must be divisible by heads");
        if (grid_extent % patch_edge != 0)
            throw Error("bad-config", "grid_extent must be divisible by patch_edge");
        if (vocab_size <= kNumControlSymbols)
            throw Error("bad-config", "vocab_size must exceed the control symbols");
    }
};

// Per-position output distributions (pre-softmax).
struct StepLogits {
    Eigen::VectorXd frag;                  // vocab_size
    std::array<Eigen::VectorXd, 3> trans;  // b_t each
    std::array<Eigen::VectorXd, 4> rot;    // b_r each
};

class Shape2Seq {
public:
    Shape2Seq(const ModelConfig& config, RandomSource& rng) : cfg_(config) {
        cfg_.validate();
        init_params(&rng);
    }

    // construct with empty params for checkpoint loading
    explicit Shape2Seq(const ModelConfig& config) : cfg_(config) {
        cfg_.validate();
        init_params(nullptr);
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // ------------------------------------------------------------------
    // Forward pieces

    // Deterministic when rng is null (eval mode).
    nn::Mat encode(const VoxelGrid& grid, RandomSource* rng = nullptr) const {
        nn::Graph g(params_);
        int mem = encode_node(g, grid, rng);
        return g.value(mem);
    }

    // Logits for every position of the prefix; callers typically use the
    // last row. Causality over the prefix is exact (tested).
    std::vector<StepLogits> decode_steps(const nn::Mat& memory, const TokenSequence& prefix,
                                         RandomSource* rng = nullptr) const {
        if (static_cast<int>(prefix.size()) > cfg_.max_len)
            throw Error("overlength", "prefix exceeds max_len");
        nn::Graph g(params_);
        int mem = g.constant(memory);
        auto heads = decoder_heads(g, mem, prefix, rng);
        std::vector<StepLogits> out(prefix.size());
        for (std::size_t t = 0; t < prefix.size(); ++t) {
            out[t].frag = g.value(heads.frag).row(static_cast<int>(t)).transpose();
            for (int a = 0; a < 3; ++a)
                out[t].trans[a] = g.value(heads.trans[a]).row(static_cast<int>(t)).transpose();
            for (int c = 0; c < 4; ++c)
                out[t].rot[c] = g.value(heads.rot[c]).row(static_cast<int>(t)).transpose();
        }
        return out;
    }

    // ------------------------------------------------------------------
    // Loss and gradients

    struct Sample {
        VoxelGrid grid;
        TokenSequence sequence;  // [BOS] ... [EOS], possibly with trailing PAD
    };

    struct LossStats {
        double loss = 0.0;       // mean per non-pad position
        double positions = 0.0;  // non-pad target positions
    };

    // Mean over non-padding target positions of CE(C) + sum CE(P) + sum CE(R);
    // control targets contribute only the C term.
    LossStats loss(const std::vector<Sample>& batch, RandomSource* rng = nullptr,
                   std::vector<nn::Mat>* grads = nullptr) const {
        double total = 0, positions = 0;
        for (const Sample& s : batch) {
            nn::Graph g(params_, grads);
            int mem = encode_node(g, s.grid, rng);
            double n = 0;
            int loss_node = sequence_loss_node(g, mem, s.sequence, rng, &n);
            total += g.value(loss_node)(0, 0);
            positions += n;
            if (grads != nullptr) g.backward(loss_node);
        }
        if (positions == 0) throw Error("empty-batch", "no supervised positions in batch");
        double mean = total / positions;
        if (!std::isfinite(mean)) throw Error("numeric-error", "loss is not finite");
        // scale gradients from sum to mean
        if (grads != nullptr)
            for (nn::Mat& m : *grads) m /= positions;
        return {mean, positions};
    }

    std::vector<nn::Mat> grad(const std::vector<Sample>& batch, RandomSource* rng = nullptr) const {
        std::vector<nn::Mat> grads = nn::zero_grads(params_);
        loss(batch, rng, &grads);
        return grads;
    }

    // ------------------------------------------------------------------
    // Generation

    // Softmax + nucleus (top-p) restriction + draw. Returns the index.
    static int nucleus_sample(const Eigen::VectorXd& logits, double p, RandomSource& rng) {
        const int n = static_cast<int>(logits.size());
        double m = logits.maxCoeff();
        Eigen::ArrayXd probs = (logits.array() - m).exp();
        probs /= probs.sum();
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (probs[a] != probs[b]) return probs[a] > probs[b];
            return a < b;
        });
        double cum = 0;
        int keep = 0;
        for (; keep < n; ) {
            cum += probs[order[keep]];
            ++keep;
            if (cum >= p) break;
        }
        double u = rng.uniform(0, cum);
        double acc = 0;
        for (int i = 0; i < keep; ++i) {
            acc += probs[order[i]];
            if (u <= acc) return order[i];
        }
        return order[keep - 1];
    }

    struct GenerateResult {
        std::vector<TokenSequence> sequences;
        int dropped_malformed = 0;
    };

    GenerateResult generate(const VoxelGrid& grid, int n, double top_p, RandomSource& rng) const {
        GenerateResult result;
        if (n <= 0) return result;
        nn::Mat memory = encode(grid, nullptr);
        for (int i = 0; i < n; ++i) {
            TokenSequence seq{Token::control(TOK_BOS)};
            bool closed = false;
            while (static_cast<int>(seq.size()) < cfg_.max_len) {
                auto steps = decode_steps(memory, seq, nullptr);
                StepLogits& last = steps.back();
                // BOS and PAD are never valid continuations
                last.frag[TOK_BOS] = -std::numeric_limits<double>::infinity();
                last.frag[TOK_PAD] = -std::numeric_limits<double>::infinity();
                int c = nucleus_sample(last.frag, top_p, rng);
                if (c == TOK_EOS) {
                    seq.push_back(Token::control(TOK_EOS));
                    closed = true;
                    break;
                }
                if (FragmentVocab::is_control(c)) {
                    seq.push_back(Token::control(c));
                } else {
                    std::array<int, 3> pc{};
                    std::array<int, 4> rc{};
                    for (int a = 0; a < 3; ++a) pc[a] = nucleus_sample(last.trans[a], top_p, rng);
                    for (int r = 0; r < 4; ++r) rc[r] = nucleus_sample(last.rot[r], top_p, rng);
                    seq.push_back(Token::fragment_token(c, pc, rc));
                }
            }
            bool has_fragment = std::any_of(seq.begin(), seq.end(),
                                            [](const Token& t) { return t.is_fragment; });
            if (!closed || !markers_balanced(seq) || !has_fragment) {
                ++result.dropped_malformed;
                continue;
            }
            result.sequences.push_back(std::move(seq));
        }
        return result;
    }

    // Greedy decoding (argmax everywhere); used by memorization checks.
    TokenSequence generate_greedy(const VoxelGrid& grid) const {
        nn::Mat memory = encode(grid, nullptr);
        TokenSequence seq{Token::control(TOK_BOS)};
        while (static_cast<int>(seq.size()) < cfg_.max_len) {
            auto steps = decode_steps(memory, seq, nullptr);
            StepLogits& last = steps.back();
            last.frag[TOK_BOS] = -std::numeric_limits<double>::infinity();
            last.frag[TOK_PAD] = -std::numeric_limits<double>::infinity();
            int c;
            last.frag.maxCoeff(&c);
            if (c == TOK_EOS) {
                seq.push_back(Token::control(TOK_EOS));
                break;
            }
            if (FragmentVocab::is_control(c)) {
                seq.push_back(Token::control(c));
            } else {
                std::array<int, 3> pc{};
                std::array<int, 4> rc{};
                for (int a = 0; a < 3; ++a) {
                    int idx;
                    last.trans[a].maxCoeff(&idx);
                    pc[a] = idx;
                }
                for (int r = 0; r < 4; ++r) {
                    int idx;
                    last.rot[r].maxCoeff(&idx);
                    rc[r] = idx;
                }
                seq.push_back(Token::fragment_token(c, pc, rc));
            }
        }
        return seq;
    }

    // ------------------------------------------------------------------
    // Checkpointing: magic, version, config block, named float32 blocks.

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error("io-error", "cannot write checkpoint " + path);
        os.write("DSRTCKPT", 8);
        write_u32(os, 1);  // version
        const int ints[10] = {cfg_.dim, cfg_.layers_enc, cfg_.layers_dec, cfg_.heads,
                              cfg_.patch_edge, cfg_.grid_extent, cfg_.vocab_size, cfg_.b_t,
                              cfg_.b_r, cfg_.max_len};
        for (int v : ints) write_u32(os, static_cast<std::uint32_t>(v));
        write_f64(os, cfg_.dropout);
        write_u32(os, static_cast<std::uint32_t>(params_.count()));
        for (std::size_t i = 0; i < params_.count(); ++i) {
            const std::string& name = params_.name(static_cast<int>(i));
            const nn::Mat& m = params_.value(static_cast<int>(i));
            write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(os, static_cast<std::uint32_t>(m.rows()));
            write_u32(os, static_cast<std::uint32_t>(m.cols()));
            for (int r = 0; r < m.rows(); ++r)
                for (int c = 0; c < m.cols(); ++c) {
                    float f = static_cast<float>(m(r, c));
                    os.write(reinterpret_cast<const char*>(&f), 4);
                }
        }
    }

    static Shape2Seq load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw Error("io-error", "cannot open checkpoint " + path);
        char magic[8];
        is.read(magic, 8);
        if (!is || std::string(magic, 8) != "DSRTCKPT")
            throw Error("checkpoint-error", "bad magic in " + path);
        if (read_u32(is) != 1) throw Error("checkpoint-error", "unsupported checkpoint version");
        ModelConfig cfg;
        cfg.dim = static_cast<int>(read_u32(is));
        cfg.layers_enc = static_cast<int>(read_u32(is));
        cfg.layers_dec = static_cast<int>(read_u32(is));
        cfg.heads = static_cast<int>(read_u32(is));
        cfg.patch_edge = static_cast<int>(read_u32(is));
        cfg.grid_extent = static_cast<int>(read_u32(is));
        cfg.vocab_size = static_cast<int>(read_u32(is));
        cfg.b_t = static_cast<int>(read_u32(is));
        cfg.b_r = static_cast<int>(read_u32(is));
        cfg.max_len = static_cast<int>(read_u32(is));
        cfg.dropout = read_f64(is);
        Shape2Seq model(cfg);
        std::uint32_t nparams = read_u32(is);
        if (nparams != model.params_.count())
            throw Error("checkpoint-error", "parameter count mismatch");
        for (std::uint32_t i = 0; i < nparams; ++i) {
            std::uint32_t len = read_u32(is);
            std::string name(len, '\0');
            is.read(name.data(), len);
            std::uint32_t rows = read_u32(is), cols = read_u32(is);
            nn::Mat& m = model.params_.value(name);
            if (m.rows() != static_cast<int>(rows) || m.cols() != static_cast<int>(cols))
                throw Error("checkpoint-error", "shape mismatch for " + name);
            for (std::uint32_t r = 0; r < rows; ++r)
                for (std::uint32_t c = 0; c < cols; ++c) {
                    float f;
                    is.read(reinterpret_cast<char*>(&f), 4);
                    m(static_cast<int>(r), static_cast<int>(c)) = f;
                }
        }
        if (!is) throw Error("checkpoint-error", "truncated checkpoint " + path);
        return model;
    }

private:
    struct HeadNodes {
        int frag;
        std::array<int, 3> trans;
        std::array<int, 4> rot;
    };

    void init_params(RandomSource* rng) {
        auto add = [&](const std::string& name, int r, int c, double s) {
            params_.add(name, r, c, s, rng);
        };
        auto add_ones = [&](const std::string& name, int c) {
            int id = params_.add(name, 1, c, 0.0, nullptr);
            params_.value(id).setOnes();
        };
        const int d = cfg_.dim, dh = cfg_.head_dim(), ff = 4 * cfg_.dim;
        const double s = 0.02;
        add("enc.patch_proj", cfg_.patch_cells(), d, s);
        add("enc.patch_bias", 1, d, 0.0);
        add("enc.pos", cfg_.num_patches(), d, s);
        for (int l = 0; l < cfg_.layers_enc; ++l) {
            std::string p = "enc.l" + std::to_string(l) + ".";
            add_ones(p + "ln1.g", d);
            add(p + "ln1.b", 1, d, 0.0);
            for (int h = 0; h < cfg_.heads; ++h) {
                std::string hp = p + "h" + std::to_string(h) + ".";
                add(hp + "wq", d, dh, s);
                add(hp + "wk", d, dh, s);
                add(hp + "wv", d, dh, s);
                add(hp + "wo", dh, d, s);
            }
            add_ones(p + "ln2.g", d);
            add(p + "ln2.b", 1, d, 0.0);
            add(p + "ffn.w1", d, ff, s);
            add(p + "ffn.b1", 1, ff, 0.0);
            add(p + "ffn.w2", ff, d, s);
            add(p + "ffn.b2", 1, d, 0.0);
        }
        add_ones("enc.final_ln.g", d);
        add("enc.final_ln.b", 1, d, 0.0);

        add("dec.frag_emb", cfg_.vocab_size, d, s);
        for (int a = 0; a < 3; ++a) add("dec.t_emb" + std::to_string(a), cfg_.b_t, d, s);
        for (int r = 0; r < 4; ++r) add("dec.r_emb" + std::to_string(r), cfg_.b_r, d, s);
        add("dec.pos", cfg_.max_len, d, s);
        for (int l = 0; l < cfg_.layers_dec; ++l) {
            std::string p = "dec.l" + std::to_string(l) + ".";
            add_ones(p + "ln1.g", d);
            add(p + "ln1.b", 1, d, 0.0);
            for (int h = 0; h < cfg_.heads; ++h) {
                std::string hp = p + "self.h" + std::to_string(h) + ".";
                add(hp + "wq", d, dh, s);
                add(hp + "wk", d, dh, s);
                add(hp + "wv", d, dh, s);
                add(hp + "wo", dh, d, s);
            }
            add_ones(p + "ln2.g", d);
            add(p + "ln2.b", 1, d, 0.0);
            for (int h = 0; h < cfg_.heads; ++h) {
                std::string hp = p + "cross.h" + std::to_string(h) + ".";
                add(hp + "wq", d, dh, s);
                add(hp + "wk", d, dh, s);
                add(hp + "wv", d, dh, s);
                add(hp + "wo", dh, d, s);
            }
            add_ones(p + "ln3.g", d);
            add(p + "ln3.b", 1, d, 0.0);
            add(p + "ffn.w1", d, ff, s);
            add(p + "ffn.b1", 1, ff, 0.0);
            add(p + "ffn.w2", ff, d, s);
            add(p + "ffn.b2", 1, d, 0.0);
        }
        add_ones("dec.final_ln.g", d);
        add("dec.final_ln.b", 1, d, 0.0);

        add("head.frag.w", d, cfg_.vocab_size, s);
        add("head.frag.b", 1, cfg_.vocab_size, 0.0);
        for (int a = 0; a < 3; ++a) {
            add("head.p" + std::to_string(a) + ".w", d, cfg_.b_t, s);
            add("head.p" + std::to_string(a) + ".b", 1, cfg_.b_t, 0.0);
        }
        for (int r = 0; r < 4; ++r) {
            add("head.r" + std::to_string(r) + ".w", d, cfg_.b_r, s);
            add("head.r" + std::to_string(r) + ".b", 1, cfg_.b_r, 0.0);
        }
    }

    int attention(nn::Graph& g, const std::string& prefix, int x, int kv_source,
                  const nn::Mat* mask, RandomSource* rng) const {
        int out = -1;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));
        for (int h = 0; h < cfg_.heads; ++h) {
            std::string hp = prefix + "h" + std::to_string(h) + ".";
            int q = g.matmul(x, g.param(hp + "wq"));
            int k = g.matmul(kv_source, g.param(hp + "wk"));
            int v = g.matmul(kv_source, g.param(hp + "wv"));
            int scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt);
            int attn = g.softmax_rows(scores, mask);
            attn = g.dropout(attn, cfg_.dropout, rng);
            int oh = g.matmul(attn, v);
            int proj = g.matmul(oh, g.param(hp + "wo"));
            out = (out == -1) ? proj : g.add(out, proj);
        }
        return out;
    }

    int ffn(nn::Graph& g, const std::string& prefix, int x, RandomSource* rng) const {
        int h = g.add_rowvec(g.matmul(x, g.param(prefix + "ffn.w1")), g.param(prefix + "ffn.b1"));
        h = g.relu(h);
        h = g.dropout(h, cfg_.dropout, rng);
        return g.add_rowvec(g.matmul(h, g.param(prefix + "ffn.w2")), g.param(prefix + "ffn.b2"));
    }

    int encode_node(nn::Graph& g, const VoxelGrid& grid, RandomSource* rng) const {
        if (grid.extent() != cfg_.grid_extent)
            throw Error("shape-mismatch", "grid extent does not match the model config");
        auto patches = extract_patches(grid, cfg_.patch_edge);
        nn::Mat x(static_cast<int>(patches.size()), cfg_.patch_cells());
        for (std::size_t i = 0; i < patches.size(); ++i)
            for (int c = 0; c < cfg_.patch_cells(); ++c)
                x(static_cast<int>(i), c) = patches[i].cells[c];
        int h = g.add_rowvec(g.matmul(g.constant(std::move(x)), g.param("enc.patch_proj")),
                             g.param("enc.patch_bias"));
        h = g.add(h, g.param("enc.pos"));
        h = g.dropout(h, cfg_.dropout, rng);
        for (int l = 0; l < cfg_.layers_enc; ++l) {
            std::string p = "enc.l" + std::to_string(l) + ".";
            int norm = g.layernorm(h, g.param(p + "ln1.g"), g.param(p + "ln1.b"));
            h = g.add(h, attention(g, p, norm, norm, nullptr, rng));
            norm = g.layernorm(h, g.param(p + "ln2.g"), g.param(p + "ln2.b"));
            h = g.add(h, ffn(g, p, norm, rng));
        }
        return g.layernorm(h, g.param("enc.final_ln.g"), g.param("enc.final_ln.b"));
    }

    // token input embedding: fragment + translation-bin + rotation-bin
    // embeddings summed; controls use only the fragment table row
    int embed_tokens(nn::Graph& g, const TokenSequence& tokens) const {
        std::vector<int> frag_ids, pos_ids;
        for (const Token& t : tokens) {
            frag_ids.push_back(t.symbol);
            pos_ids.push_back(static_cast<int>(pos_ids.size()));
        }
        int x = g.gather_rows(g.param("dec.frag_emb"), frag_ids);
        for (int a = 0; a < 3; ++a) {
            std::vector<int> ids;
            for (const Token& t : tokens) ids.push_back(t.is_fragment ? t.pc[a] : 0);
            int e = g.gather_rows(g.param("dec.t_emb" + std::to_string(a)), ids);
            x = g.add(x, mask_control_rows(g, e, tokens));
        }
        for (int r = 0; r < 4; ++r) {
            std::vector<int> ids;
            for (const Token& t : tokens) ids.push_back(t.is_fragment ? t.rc[r] : 0);
            int e = g.gather_rows(g.param("dec.r_emb" + std::to_string(r)), ids);
            x = g.add(x, mask_control_rows(g, e, tokens));
        }
        x = g.add(x, g.gather_rows(g.param("dec.pos"), pos_ids));
        return x;
    }

    // zero the rows of control tokens (elementwise product with a 0/1 mask)
    int mask_control_rows(nn::Graph& g, int e, const TokenSequence& tokens) const {
        nn::Mat m(static_cast<int>(tokens.size()), cfg_.dim);
        for (std::size_t i = 0; i < tokens.size(); ++i)
            m.row(static_cast<int>(i)).setConstant(tokens[i].is_fragment ? 1.0 : 0.0);
        return g.cwise_const_product(e, std::move(m));
    }

    int decoder_hidden(nn::Graph& g, int memory, const TokenSequence& tokens,
                       RandomSource* rng) const {
        const int T = static_cast<int>(tokens.size());
        nn::Mat causal(T, T);
        causal.setZero();
        for (int i = 0; i < T; ++i)
            for (int j = i + 1; j < T; ++j) causal(i, j) = -std::numeric_limits<double>::infinity();
        int x = embed_tokens(g, tokens);
        x = g.dropout(x, cfg_.dropout, rng);
        for (int l = 0; l < cfg_.layers_dec; ++l) {
            std::string p = "dec.l" + std::to_string(l) + ".";
            int norm = g.layernorm(x, g.param(p + "ln1.g"), g.param(p + "ln1.b"));
            x = g.add(x, attention(g, p + "self.", norm, norm, &causal, rng));
            norm = g.layernorm(x, g.param(p + "ln2.g"), g.param(p + "ln2.b"));
            x = g.add(x, attention(g, p + "cross.", norm, memory, nullptr, rng));
            norm = g.layernorm(x, g.param(p + "ln3.g"), g.param(p + "ln3.b"));
            x = g.add(x, ffn(g, p, norm, rng));
        }
        return g.layernorm(x, g.param("dec.final_ln.g"), g.param("dec.final_ln.b"));
    }

    HeadNodes decoder_heads(nn::Graph& g, int memory, const TokenSequence& tokens,
                            RandomSource* rng) const {
        int h = decoder_hidden(g, memory, tokens, rng);
        HeadNodes out{};
        out.frag = g.add_rowvec(g.matmul(h, g.param("head.frag.w")), g.param("head.frag.b"));
        for (int a = 0; a < 3; ++a)
            out.trans[a] = g.add_rowvec(g.matmul(h, g.param("head.p" + std::to_string(a) + ".w")),
                                        g.param("head.p" + std::to_string(a) + ".b"));
        for (int r = 0; r < 4; ++r)
            out.rot[r] = g.add_rowvec(g.matmul(h, g.param("head.r" + std::to_string(r) + ".w")),
                                      g.param("head.r" + std::to_string(r) + ".b"));
        return out;
    }

    // Builds the summed (not averaged) loss node for one sample and reports
    // the number of supervised positions through *positions.
    int sequence_loss_node(nn::Graph& g, int memory, const TokenSequence& seq, RandomSource* rng,
                           double* positions) const {
        if (seq.size() < 2) throw Error("bad-sample", "sequence must be at least [BOS][EOS]");
        if (static_cast<int>(seq.size()) > cfg_.max_len + 1)
            throw Error("overlength", "sequence exceeds max_len");
        TokenSequence input(seq.begin(), seq.end() - 1);
        const int T = static_cast<int>(input.size());
        auto heads = decoder_heads(g, memory, input, rng);

        std::vector<int> frag_t(T, 0);
        std::vector<double> frag_w(T, 0), pose_w(T, 0);
        std::array<std::vector<int>, 3> p_t;
        std::array<std::vector<int>, 4> r_t;
        for (auto& v : p_t) v.assign(T, 0);
        for (auto& v : r_t) v.assign(T, 0);
        double n = 0;
        for (int t = 0; t < T; ++t) {
            const Token& target = seq[t + 1];
            if (!target.is_fragment && target.symbol == TOK_PAD) continue;
            frag_t[t] = target.symbol;
            frag_w[t] = 1.0;
            n += 1;
            if (target.is_fragment) {
                pose_w[t] = 1.0;
                for (int a = 0; a < 3; ++a) p_t[a][t] = target.pc[a];
                for (int r = 0; r < 4; ++r) r_t[r][t] = target.rc[r];
            }
        }
        *positions = n;
        int loss = g.cross_entropy_rows(heads.frag, frag_t, frag_w);
        for (int a = 0; a < 3; ++a)
            loss = g.add(loss, g.cross_entropy_rows(heads.trans[a], p_t[a], pose_w));
        for (int r = 0; r < 4; ++r)
            loss = g.add(loss, g.cross_entropy_rows(heads.rot[r], r_t[r], pose_w));
        return loss;
    }

    static void write_u32(std::ostream& os, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    static std::uint32_t read_u32(std::istream& is) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    static void write_f64(std::ostream& os, double v) {
        os.write(reinterpret_cast<const char*>(&v), 8);
    }
    static double read_f64(std::istream& is) {
        double v;
        is.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }

    ModelConfig cfg_;
    nn::ParamStore params_;
};

// ---------------------------------------------------------------------------
// Augmentation: a shared random rigid motion applied to the molecule and its
// fragment poses (rotation uniform on SO(3), translation U[-range, range]).

struct AugmentConfig {
    bool rotate = true;
    double translate_range = 2.0;  // Angstrom, per axis
};

struct RigidMotion {
    Quaternion rotation = Quaternion::identity();
    Vec3 translation;
};

inline RigidMotion sample_rigid_motion(RandomSource& rng, const AugmentConfig& cfg = {}) {
    RigidMotion g;
    if (cfg.rotate) g.rotation = Quaternion::random_uniform(rng);
    if (cfg.translate_range > 0)
        g.translation = {rng.uniform(-cfg.translate_range, cfg.translate_range),
                         rng.uniform(-cfg.translate_range, cfg.translate_range),
                         rng.uniform(-cfg.translate_range, cfg.translate_range)};
    return g;
}

inline Molecule apply_rigid(const Molecule& m, const RigidMotion& g) {
    Molecule out = m;
    for (Atom& a : out.atoms) a.position = g.rotation.rotate(a.position) + g.translation;
    return out;
}

inline Molecule augment(const Molecule& m, RandomSource& rng, const AugmentConfig& cfg = {}) {
    return apply_rigid(m, sample_rigid_motion(rng, cfg));
}

inline FragmentTree apply_rigid(const FragmentTree& tree, const RigidMotion& g) {
    FragmentTree out = tree;
    for (TreeNode& n : out.nodes) {
        n.translation = g.rotation.rotate(n.translation) + g.translation;
        n.rotation = (g.rotation * n.rotation).normalized();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainSample {
    Molecule molecule;    // centered near the grid-frame origin
    FragmentTree tree;    // poses in the same frame
};

struct TrainConfig {
    nn::AdamWConfig adamw;
    int steps = 1000;
    int batch_size = 8;
    double voxel_eps = 0.1;   // training-time voxelization noise
    AugmentConfig augment;
    bool augment_enabled = true;
    int log_every = 10;
    std::string checkpoint_path;    // optional; written at the end and on abort
    std::string loss_curve_path;    // optional CSV: step,loss,lr
};

struct TrainLog {
    std::vector<std::array<double, 3>> curve;  // step, loss, lr
    double initial_loss = 0;
    double final_loss = 0;
};

// Runs AdamW over random batches of (augmented, re-voxelized) samples.
inline TrainLog train(Shape2Seq& model, const std::vector<TrainSample>& corpus,
                      const GridSpec& grid_spec, const FragmentVocab& vocab,
                      const CodecParams& codec_params, const TrainConfig& tc, RandomSource& rng) {
    if (corpus.empty()) throw Error("empty-corpus", "no training samples");
    nn::AdamW opt(model.params(), tc.adamw);
    TrainLog log;
    std::ofstream curve;
    if (!tc.loss_curve_path.empty()) {
        curve.open(tc.loss_curve_path);
        curve << "step,loss,lr\n";
    }
    auto make_sample = [&](const TrainSample& ts, RandomSource& lr) -> Shape2Seq::Sample {
        RigidMotion g = tc.augment_enabled ? sample_rigid_motion(lr, tc.augment) : RigidMotion{};
        Molecule mol = apply_rigid(ts.molecule, g);
        FragmentTree tree = apply_rigid(ts.tree, g);
        Shape2Seq::Sample s;
        s.grid = voxelize(mol, grid_spec, tc.voxel_eps, tc.voxel_eps > 0 ? &lr : nullptr);
        s.sequence = linearize(tree, vocab, codec_params);
        return s;
    };
    for (int step = 1; step <= tc.steps; ++step) {
        std::vector<Shape2Seq::Sample> batch;
        for (int b = 0; b < tc.batch_size; ++b) {
            std::size_t pick = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1));
            batch.push_back(make_sample(corpus[pick], rng));
        }
        std::vector<nn::Mat> grads = nn::zero_grads(model.params());
        Shape2Seq::LossStats stats;
        try {
            stats = model.loss(batch, model.config().dropout > 0 ? &rng : nullptr, &grads);
        } catch (const Error& e) {
            if (!tc.checkpoint_path.empty()) model.save(tc.checkpoint_path);
            throw Error("divergence", std::string("training aborted at step ") +
                                          std::to_string(step) + ": " + e.what());
        }
        double lr = opt.step(grads);
        if (step == 1) log.initial_loss = stats.loss;
        log.final_loss = stats.loss;
        if (step % tc.log_every == 0 || step == 1 || step == tc.steps) {
            log.curve.push_back({static_cast<double>(step), stats.loss, lr});
            if (curve.is_open()) curve << step << ',' << stats.loss << ',' << lr << '\n';
        }
    }
    if (!tc.checkpoint_path.empty()) model.save(tc.checkpoint_path);
    return log;
}

} // namespace desert
