#pragma once

// Minimal reverse-mode autodiff over Eigen matrices: enough ops to express a
// Transformer encoder-decoder with exact gradients (verified against finite
// differences in the test suite).

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "desert/common.hpp"

namespace desert::nn {

using Mat = Eigen::MatrixXd;

// Named parameter container. Parameter order is the registration order and
// is stable across runs for a fixed config.
class ParamStore {
public:
    int add(const std::string& name, int rows, int cols, double init_scale, RandomSource* rng) {
        if (index_.count(name)) throw Error("param-error", "duplicate parameter " + name);
        Mat m(rows, cols);
        if (rng != nullptr && init_scale != 0.0)
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) m(r, c) = rng->normal() * init_scale;
        else
            m.setZero();
        index_[name] = static_cast<int>(values_.size());
        names_.push_back(name);
        values_.push_back(std::move(m));
        return static_cast<int>(values_.size()) - 1;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("param-error", "unknown parameter " + name);
        return it->second;
    }

    Mat& value(int id) { return values_[id]; }
    const Mat& value(int id) const { return values_[id]; }
    Mat& value(const std::string& name) { return values_[find(name)]; }

    std::size_t count() const { return values_.size(); }
    const std::string& name(int id) const { return names_[id]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const Mat& m : values_) n += static_cast<std::size_t>(m.size());
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Mat> values_;
    std::unordered_map<std::string, int> index_;
};

// One computation graph per forward pass. Node 0.. are created in forward
// order; backward() replays the tape in reverse and accumulates parameter
// gradients into an external vector aligned with the ParamStore.
class Graph {
public:
    explicit Graph(const ParamStore& params, std::vector<Mat>* param_grads = nullptr)
        : params_(params), param_grads_(param_grads) {}

    int constant(Mat v) { return add_node(std::move(v), -1, nullptr); }

    int param(int param_id) {
        auto it = param_nodes_.find(param_id);
        if (it != param_nodes_.end()) return it->second;
        int id = add_node(params_.value(param_id), param_id, nullptr);
        param_nodes_[param_id] = id;
        return id;
    }

    int param(const std::string& name) { return param(params_.find(name)); }

    const Mat& value(int id) const { return vals_[id]; }
    const Mat& grad(int id) const { return grads_[id]; }

    int matmul(int a, int b) {
        int id = add_node(vals_[a] * vals_[b], -1, nullptr);
        tape_.push_back([this, id, a, b] {
            grads_[a] += grads_[id] * vals_[b].transpose();
            grads_[b] += vals_[a].transpose() * grads_[id];
        });
        return id;
    }

    int add(int a, int b) {
        int id = add_node(vals_[a] + vals_[b], -1, nullptr);
        tape_.push_back([this, id, a, b] {
            grads_[a] += grads_[id];
            grads_[b] += grads_[id];
        });
        return id;
    }

    // b is 1 x cols, broadcast over rows of a
    int add_rowvec(int a, int b) {
        Mat v = vals_[a];
        v.rowwise() += vals_[b].row(0);
        int id = add_node(std::move(v), -1, nullptr);
        tape_.push_back([this, id, a, b] {
            grads_[a] += grads_[id];
            grads_[b].row(0) += grads_[id].colwise().sum();
        });
        return id;
    }

    int scale(int a, double s) {
        int id = add_node(vals_[a] * s, -1, nullptr);
        tape_.push_back([this, id, a, s] { grads_[a] += grads_[id] * s; });
        return id;
    }

    int transpose(int a) {
        int id = add_node(vals_[a].transpose(), -1, nullptr);
        tape_.push_back([this, id, a] { grads_[a] += grads_[id].transpose(); });
        return id;
    }

    int relu(int a) {
        int id = add_node(vals_[a].cwiseMax(0.0), -1, nullptr);
        tape_.push_back([this, id, a] {
            grads_[a].array() += grads_[id].array() * (vals_[a].array() > 0.0).cast<double>();
        });
        return id;
    }

    // rowwise layer norm with gain/bias (1 x cols)
    int layernorm(int a, int gain, int bias, double eps = 1e-5) {
        const Mat& x = vals_[a];
        const int rows = static_cast<int>(x.rows()), cols = static_cast<int>(x.cols());
        Mat xhat(rows, cols);
        Eigen::VectorXd inv_std(rows);
        for (int r = 0; r < rows; ++r) {
            double mu = x.row(r).mean();
            double var = (x.row(r).array() - mu).square().mean();
            double is = 1.0 / std::sqrt(var + eps);
            inv_std(r) = is;
            xhat.row(r) = (x.row(r).array() - mu) * is;
        }
        Mat y = xhat;
        y.array().rowwise() *= vals_[gain].row(0).array();
        y.rowwise() += vals_[bias].row(0);
        int id = add_node(std::move(y), -1, nullptr);
        tape_.push_back([this, id, a, gain, bias, xhat, inv_std] {
            const Mat& gy = grads_[id];
            const int rows = static_cast<int>(gy.rows()), cols = static_cast<int>(gy.cols());
            grads_[bias].row(0) += gy.colwise().sum();
            grads_[gain].row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
            Mat gxhat = gy;
            gxhat.array().rowwise() *= vals_[gain].row(0).array();
            for (int r = 0; r < rows; ++r) {
                double sum_g = gxhat.row(r).sum();
                double sum_gx = gxhat.row(r).dot(xhat.row(r));
                grads_[a].row(r).array() +=
                    inv_std(r) / cols *
                    (cols * gxhat.row(r).array() - sum_g - xhat.row(r).array() * sum_gx);
            }
        });
        return id;
    }

    // rowwise softmax; add_mask (same shape, 0 or -inf entries) applied first
    int softmax_rows(int a, const Mat* add_mask = nullptr) {
        Mat x = vals_[a];
        if (add_mask != nullptr) x += *add_mask;
        Mat y(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r) {
            double m = x.row(r).maxCoeff();
            Eigen::ArrayXd e = (x.row(r).array() - m).exp();
            y.row(r) = (e / e.sum()).matrix();
        }
        int id = add_node(std::move(y), -1, nullptr);
        tape_.push_back([this, id, a] {
            const Mat& y = vals_[id];
            const Mat& gy = grads_[id];
            for (int r = 0; r < y.rows(); ++r) {
                double dot = gy.row(r).dot(y.row(r));
                grads_[a].row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
            }
        });
        return id;
    }

    // gather rows of a table (embedding lookup); backward scatter-adds
    int gather_rows(int table, std::vector<int> ids) {
        const Mat& t = vals_[table];
        Mat out(static_cast<int>(ids.size()), t.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<int>(i)) = t.row(ids[i]);
        int id = add_node(std::move(out), -1, nullptr);
        tape_.push_back([this, id, table, ids = std::move(ids)] {
            for (std::size_t i = 0; i < ids.size(); ++i)
                grads_[table].row(ids[i]) += grads_[id].row(static_cast<int>(i));
        });
        return id;
    }

    // elementwise product with a constant matrix
    int cwise_const_product(int a, Mat m) {
        int id = add_node(vals_[a].cwiseProduct(m), -1, nullptr);
        tape_.push_back([this, id, a, m = std::move(m)] {
            grads_[a] += grads_[id].cwiseProduct(m);
        });
        return id;
    }

    // inverted dropout; identity when rate == 0 or rng == nullptr
    int dropout(int a, double rate, RandomSource* rng) {
        if (rate <= 0.0 || rng == nullptr) return a;
        Mat mask(vals_[a].rows(), vals_[a].cols());
        double keep = 1.0 - rate;
        for (int r = 0; r < mask.rows(); ++r)
            for (int c = 0; c < mask.cols(); ++c)
                mask(r, c) = rng->uniform(0, 1) < keep ? 1.0 / keep : 0.0;
        int id = add_node(vals_[a].cwiseProduct(mask), -1, nullptr);
        tape_.push_back([this, id, a, mask] { grads_[a] += grads_[id].cwiseProduct(mask); });
        return id;
    }

    // Weighted softmax cross entropy over rows: sum_r w_r * (-log softmax(x_r)[t_r]).
    // Rows with weight 0 are skipped. Returns a 1x1 node.
    int cross_entropy_rows(int logits, std::vector<int> targets, std::vector<double> weights) {
        const Mat& x = vals_[logits];
        Mat probs(x.rows(), x.cols());
        double total = 0;
        for (int r = 0; r < x.rows(); ++r) {
            if (weights[r] == 0.0) {
                probs.row(r).setZero();
                continue;
            }
            double m = x.row(r).maxCoeff();
            Eigen::ArrayXd e = (x.row(r).array() - m).exp();
            double z = e.sum();
            probs.row(r) = (e / z).matrix();
            total += weights[r] * (std::log(z) - (x(r, targets[r]) - m));
        }
        Mat out(1, 1);
        out(0, 0) = total;
        int id = add_node(std::move(out), -1, nullptr);
        tape_.push_back([this, id, logits, probs, targets = std::move(targets),
                         weights = std::move(weights)] {
            double g = grads_[id](0, 0);
            for (int r = 0; r < probs.rows(); ++r) {
                if (weights[r] == 0.0) continue;
                grads_[logits].row(r) += g * weights[r] * probs.row(r);
                grads_[logits](r, targets[r]) -= g * weights[r];
            }
        });
        return id;
    }

    int add_scalar(int a, int b) { return add(a, b); }  // both 1x1

    void backward(int loss_node) {
        for (std::size_t i = 0; i < vals_.size(); ++i) grads_[i].setZero();
        grads_[loss_node](0, 0) = 1.0;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
        if (param_grads_ != nullptr)
            for (auto& [pid, node] : param_nodes_) (*param_grads_)[pid] += grads_[node];
    }

private:
    int add_node(Mat v, int param_id, void*) {
        (void)param_id;
        vals_.push_back(std::move(v));
        grads_.emplace_back(Mat::Zero(vals_.back().rows(), vals_.back().cols()));
        return static_cast<int>(vals_.size()) - 1;
    }

    const ParamStore& params_;
    std::vector<Mat>* param_grads_;
    std::vector<Mat> vals_;
    std::vector<Mat> grads_;
    std::vector<std::function<void()>> tape_;
    std::unordered_map<int, int> param_nodes_;
};

// AdamW with linear warmup then inverse-sqrt decay.
struct AdamWConfig {
    double lr = 5e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_steps = 4000;
};

class AdamW {
public:
    AdamW(ParamStore& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
        for (std::size_t i = 0; i < params.count(); ++i) {
            m_.emplace_back(Mat::Zero(params.value(static_cast<int>(i)).rows(),
                                      params.value(static_cast<int>(i)).cols()));
            v_.emplace_back(m_.back());
        }
    }

    double learning_rate(long step) const {
        if (step <= cfg_.warmup_steps)
            return cfg_.lr * static_cast<double>(step) / cfg_.warmup_steps;
        return cfg_.lr * std::sqrt(static_cast<double>(cfg_.warmup_steps) / static_cast<double>(step));
    }

    // grads aligned with the store; returns the lr used
    double step(const std::vector<Mat>& grads) {
        ++t_;
        double lr = learning_rate(t_);
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.count(); ++i) {
            Mat& p = params_.value(static_cast<int>(i));
            m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * grads[i];
            v_[i] = cfg_.beta2 * v_[i].array().matrix() +
                    (1 - cfg_.beta2) * grads[i].cwiseProduct(grads[i]);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            p.array() -= lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) +
                               cfg_.weight_decay * p.array());
        }
        return lr;
    }

    long step_count() const { return t_; }

private:
    ParamStore& params_;
    AdamWConfig cfg_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

inline std::vector<Mat> zero_grads(const ParamStore& params) {
    std::vector<Mat> g;
    g.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i)
        g.emplace_back(Mat::Zero(params.value(static_cast<int>(i)).rows(),
                                 params.value(static_cast<int>(i)).cols()));
    return g;
}

} // namespace desert::nn
