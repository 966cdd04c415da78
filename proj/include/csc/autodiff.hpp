#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "csc/tensor.hpp"

namespace csc::autodiff {

using NodeId = std::int32_t;

/// Trainable leaf tensor. Lives outside any graph; graphs reference it and
/// deposit gradients into `grad` on backward.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape());
    }
};

using ParamPtr = std::shared_ptr<Parameter>;

/// Reverse-mode tape. Nodes are appended in execution order (which is a
/// topological order by construction); forward values are computed eagerly
/// at record time, and backward replays the tape once in reverse.
///
/// A graph is confined to one thread from construction through backward().
class Graph {
public:
    // ---- leaves ----
    NodeId constant(Tensor value);
    /// Registers a parameter leaf. Repeated registration of the same
    /// parameter returns the original node, so gradients from every use
    /// accumulate in one place.
    NodeId parameter(const ParamPtr& p);

    // ---- elementwise ----
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, real_t c);
    NodeId sum(NodeId a);
    NodeId relu(NodeId a);
    NodeId leaky_relu(NodeId a, real_t slope);
    NodeId tanh(NodeId a);
    NodeId soft_threshold(NodeId a, real_t lambda);

    // ---- convolution ----
    NodeId conv2d(NodeId input, NodeId kernel, const ConvGeometry& geom);
    NodeId deconv2d(NodeId code, NodeId kernel, const ConvGeometry& geom);

    // ---- normalization ----
    /// Train-mode batch norm: normalizes with batch statistics and updates
    /// `stats` in place as a side effect (the side effect is not part of the
    /// differentiated computation).
    NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, BnRunning* stats);
    NodeId batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const BnRunning& stats);

    // ---- shape / linear algebra ----
    NodeId reshape(NodeId a, std::vector<std::int64_t> shape);
    NodeId transpose2d(NodeId a);
    NodeId matmul(NodeId a, NodeId b);
    /// I + c*S for square S.
    NodeId add_scaled_identity(NodeId s, real_t c);
    /// log det of a symmetric positive definite matrix, via Cholesky.
    NodeId logdet_spd(NodeId s);
    /// Column concatenation of two matrices with equal row counts.
    NodeId concat_cols(NodeId a, NodeId b);

    /// Forward identity; backward blocks all gradient flow into `a`.
    NodeId stop_gradient(NodeId a);

    // ---- execution ----
    const Tensor& value(NodeId id) const;
    /// Gradient of the last backward() root with respect to node `id`.
    /// Zero tensor if the node was not reached.
    Tensor grad(NodeId id) const;
    /// Reverse pass from a scalar root. Populates every registered
    /// parameter's grad slot (zeros for unreached parameters).
    void backward(NodeId root);

    std::size_t node_count() const { return nodes_.size(); }
    /// Smallest distance of any recorded relu/leaky_relu/soft_threshold
    /// input to its nondifferentiable kink. Used by finite-difference tests
    /// to reject draws too close to a kink.
    double min_kink_gap() const { return min_kink_gap_; }

private:
    struct Node {
        Tensor value;
        // Accumulates into input grads given this node's grad.
        std::function<void(Graph&, NodeId)> backward;
    };

    NodeId push(Tensor value, std::function<void(Graph&, NodeId)> backward);
    void accumulate(NodeId id, const Tensor& g);
    void check_exists(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<std::pair<ParamPtr, NodeId>> params_;
    double min_kink_gap_ = std::numeric_limits<double>::infinity();
};

} // namespace csc::autodiff
