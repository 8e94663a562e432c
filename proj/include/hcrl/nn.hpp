#ifndef HCRL_NN_HPP
#define HCRL_NN_HPP

#include "hcrl/common.hpp"

#include <functional>
#include <string>
#include <vector>

// Minimal dense network engine: explicit forward tape, exact manual
// backprop, Adam, and a central-difference oracle for gradient checks.
// Batched throughout; a batch is a row-major set of instances.

namespace hcrl {
namespace nn {

enum class Activation { tanh, relu, identity };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    default: return "identity";
    }
}

inline Activation activation_from_string(const std::string &s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw invalid_input("unknown activation: " + s);
}

struct DenseLayer {
    Mat W; // out x in
    Vec b; // out
    Activation act = Activation::identity;
};

struct DenseNet {
    std::vector<DenseLayer> layers;

    Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().W.cols(); }
    Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().W.rows(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto &l : layers)
            n += static_cast<std::size_t>(l.W.size() + l.b.size());
        return n;
    }

    Vec flatten() const {
        Vec out(param_count());
        Eigen::Index at = 0;
        for (const auto &l : layers) {
            out.segment(at, l.W.size()) = Eigen::Map<const Vec>(l.W.data(), l.W.size());
            at += l.W.size();
            out.segment(at, l.b.size()) = l.b;
            at += l.b.size();
        }
        return out;
    }

    void unflatten(const Vec &theta) {
        require(theta.size() == static_cast<Eigen::Index>(param_count()),
                "DenseNet::unflatten: parameter size mismatch");
        Eigen::Index at = 0;
        for (auto &l : layers) {
            Eigen::Map<Vec>(l.W.data(), l.W.size()) = theta.segment(at, l.W.size());
            at += l.W.size();
            l.b = theta.segment(at, l.b.size());
            at += l.b.size();
        }
    }
};

/// Chain of affine+activation layers; hidden layers tanh, output identity.
/// Weights uniform in [-r, r] with r = sqrt(6/(fan_in+fan_out)).
inline DenseNet make_mlp(const std::vector<Eigen::Index> &dims, Rng &rng,
                         Activation hidden = Activation::tanh,
                         Activation output = Activation::identity) {
    require(dims.size() >= 2, "make_mlp: need at least input and output dims");
    DenseNet net;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        DenseLayer l;
        l.W.resize(dims[k + 1], dims[k]);
        double r = std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
        for (Eigen::Index i = 0; i < l.W.rows(); ++i)
            for (Eigen::Index j = 0; j < l.W.cols(); ++j)
                l.W(i, j) = rng.uniform(-r, r);
        l.b = Vec::Zero(dims[k + 1]);
        l.act = (k + 2 == dims.size()) ? output : hidden;
        net.layers.push_back(std::move(l));
    }
    return net;
}

/// Per-layer activations recorded by forward; everything backward needs.
struct Tape {
    Mat input;                    // batch x in
    std::vector<Mat> activations; // one batch x out per layer
};

inline Mat apply_activation(Activation act, Mat z) {
    switch (act) {
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    default: return z;
    }
}

/// X is batch x input_dim. Returns batch x output_dim plus the tape.
inline std::pair<Mat, Tape> forward(const DenseNet &net, const Mat &X) {
    require(!net.layers.empty(), "forward: empty network");
    require(X.cols() == net.input_dim(),
            "forward: input dim " + std::to_string(X.cols()) + " != expected " +
                std::to_string(net.input_dim()));
    if (!X.allFinite())
        throw numeric_error("forward: non-finite input");
    Tape tape;
    tape.input = X;
    Mat cur = X;
    for (const auto &l : net.layers) {
        Mat z = cur * l.W.transpose();
        z.rowwise() += l.b.transpose();
        cur = apply_activation(l.act, std::move(z));
        tape.activations.push_back(cur);
    }
    return {cur, std::move(tape)};
}

inline std::pair<Vec, Tape> forward(const DenseNet &net, const Vec &x) {
    auto [Y, tape] = forward(net, Mat(x.transpose()));
    return {Vec(Y.row(0)), std::move(tape)};
}

struct NetGrads {
    std::vector<Mat> dW;
    std::vector<Vec> db;

    Vec flatten() const {
        Eigen::Index n = 0;
        for (std::size_t k = 0; k < dW.size(); ++k)
            n += dW[k].size() + db[k].size();
        Vec out(n);
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < dW.size(); ++k) {
            out.segment(at, dW[k].size()) = Eigen::Map<const Vec>(dW[k].data(), dW[k].size());
            at += dW[k].size();
            out.segment(at, db[k].size()) = db[k];
            at += db[k].size();
        }
        return out;
    }
};

inline NetGrads zero_grads(const DenseNet &net) {
    NetGrads g;
    for (const auto &l : net.layers) {
        g.dW.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
        g.db.push_back(Vec::Zero(l.b.size()));
    }
    return g;
}

/// Exact gradients of <grad_out, output> w.r.t. parameters and input.
/// grad_out is batch x output_dim, matching the tape's batch.
inline std::pair<NetGrads, Mat> backward(const DenseNet &net, const Tape &tape, const Mat &grad_out) {
    require(tape.activations.size() == net.layers.size(), "backward: tape/net layer count mismatch");
    require(grad_out.rows() == tape.input.rows() && grad_out.cols() == net.output_dim(),
            "backward: grad_out shape mismatch");
    for (std::size_t k = 0; k < net.layers.size(); ++k)
        require(tape.activations[k].cols() == net.layers[k].W.rows(),
                "backward: tape/net dim mismatch at layer " + std::to_string(k));

    NetGrads grads;
    grads.dW.resize(net.layers.size());
    grads.db.resize(net.layers.size());

    Mat delta = grad_out;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const auto &A = tape.activations[k];
        switch (net.layers[k].act) {
        case Activation::tanh:
            delta = delta.cwiseProduct((1.0 - A.array().square()).matrix());
            break;
        case Activation::relu:
            delta = delta.cwiseProduct((A.array() > 0.0).cast<double>().matrix());
            break;
        case Activation::identity:
            break;
        }
        const Mat &in = (k == 0) ? tape.input : tape.activations[k - 1];
        grads.dW[k] = delta.transpose() * in;
        grads.db[k] = delta.colwise().sum().transpose();
        delta = delta * net.layers[k].W; // becomes grad w.r.t. layer input
    }
    return {std::move(grads), std::move(delta)};
}

/// Bias-corrected adaptive-moment update over a flat parameter vector.
/// Convention is descent: params -= lr * mhat / (sqrt(vhat) + eps).
struct AdamState {
    Vec m, v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(Eigen::Index n = 0, double lr_ = 1e-3) : m(Vec::Zero(n)), v(Vec::Zero(n)), lr(lr_) {}
};

inline void adam_step(Vec &params, const Vec &grads, AdamState &st) {
    require(params.size() == grads.size() && params.size() == st.m.size(),
            "adam_step: shape mismatch");
    if (!grads.allFinite())
        throw numeric_error("adam_step: non-finite gradient, step rejected");
    st.step += 1;
    st.m = st.beta1 * st.m + (1.0 - st.beta1) * grads;
    st.v = st.beta2 * st.v + (1.0 - st.beta2) * grads.cwiseProduct(grads);
    double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    params.array() -=
        st.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.eps);
}

/// Central differences (f(x+e) - f(x-e)) / 2e per coordinate.
inline Vec finite_diff_grad(const std::function<double(const Vec &)> &f, const Vec &params,
                            double eps = 1e-5) {
    Vec g(params.size());
    Vec p = params;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        double orig = p[i];
        p[i] = orig + eps;
        double up = f(p);
        p[i] = orig - eps;
        double dn = f(p);
        p[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(dn))
            throw numeric_error("finite_diff_grad: non-finite objective at coordinate " +
                                std::to_string(i));
        g[i] = (up - dn) / (2.0 * eps);
    }
    return g;
}

/// ||a-b|| / max(||b||, floor); the gradient-check metric used repo-wide.
inline double relative_error(const Vec &a, const Vec &b, double floor = 1e-12) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

} // namespace nn
} // namespace hcrl

#endif
