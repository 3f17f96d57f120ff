#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kgd::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Trainable tensor. grad accumulates across backward passes until cleared.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    // AdamW moments.
    Matrix m;
    Matrix v;
    bool decay = true;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
};

// Reverse-mode tape over dense double matrices.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var scalar(double v);
    Var param(Parameter& p);

    // Seeds d(loss)/d(loss) = 1 and propagates into every reachable Parameter::grad.
    void backward(const Var& loss);

    std::size_t size() const { return nodes_.size(); }

    // Node construction for ops.
    Var push(Matrix value, bool needs_grad, std::function<void()> backprop);
    const Matrix& value(int id) const {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        return n.external ? *n.external : n.value;
    }
    Matrix& grad(int id);
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

private:
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Matrix grad;
        bool needs_grad = false;
        std::function<void()> backprop;
    };
    std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row);     // broadcast a 1xC row over every row of a
Var scale_rows(Var a, Var col);  // row i of a times col(i)
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var row(Var a, Eigen::Index i);
Var element(Var a, Eigen::Index i, Eigen::Index j);

// Element-wise.
Var tanh(Var a);
Var sigmoid(Var a);

// Reductions.
Var sum(Var a);
Var mean_rows(Var a);                                      // 1xC
Var sum_rows(Var a, Eigen::Index begin, Eigen::Index end);  // 1xC over [begin, end)
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var logsumexp_rows(Var a);  // Rx1
Var l2_normalize_rows(Var a, double eps = 1e-9);

// Embedding lookups read directly from a parameter table.
Var gather_rows(Tape& tape, Parameter& table, const std::vector<int>& indices);
// Mean of the listed rows per output row; an empty bag yields a zero row.
Var embedding_bag(Tape& tape, Parameter& table, const std::vector<std::vector<int>>& bags);

// Losses (1x1).
Var bce_with_logits(Var logit, double label);
Var cross_entropy(Var logits_row, Eigen::Index target);  // -log softmax(logits)[target]
Var sequence_cross_entropy(Var logits, const std::vector<int>& targets);  // summed over rows

// Element-wise helpers that do not record.
double sigmoid(double x);
Matrix softmax_rows(const Matrix& m);

}  // namespace kgd::ad
