#include "kgd/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace kgd::ad {

namespace {

void ensure_grad(Parameter& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
}

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::push(Matrix value, bool needs_grad, std::function<void()> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    const Matrix& v = n.external ? *n.external : n.value;
    if (n.grad.rows() != v.rows() || n.grad.cols() != v.cols()) n.grad.setZero(v.rows(), v.cols());
    return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

Var Tape::param(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.needs_grad = true;
    const int id = static_cast<int>(nodes_.size());
    n.backprop = [this, id, &p] {
        ensure_grad(p);
        p.grad += grad(id);
    };
    nodes_.push_back(std::move(n));
    return {this, id};
}

void Tape::backward(const Var& loss) {
    check(loss.tape == this, "backward: foreign variable");
    check(value(loss.id).size() == 1, "backward: loss must be a scalar");
    if (!needs_grad(loss.id)) return;
    grad(loss.id)(0, 0) += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (n.needs_grad && n.grad.size() > 0 && n.backprop) n.backprop();
    }
}

// ---------------------------------------------------------------------------

namespace {

bool any_grad(std::initializer_list<Var> vars) {
    for (const auto& v : vars)
        if (v.tape->needs_grad(v.id)) return true;
    return false;
}

int next_id(const Tape* t) { return static_cast<int>(t->size()); }

}  // namespace

Var matmul(Var a, Var b) {
    Tape* t = a.tape;
    check(a.cols() == b.rows(), "matmul: shape mismatch");
    const int o = next_id(t);
    return t->push(a.value() * b.value(), any_grad({a, b}), [t, a, b, o] {
        const Matrix& g = t->grad(o);
        if (t->needs_grad(a.id)) t->grad(a.id).noalias() += g * t->value(b.id).transpose();
        if (t->needs_grad(b.id)) t->grad(b.id).noalias() += t->value(a.id).transpose() * g;
    });
}

Var matmul_nt(Var a, Var b) {
    Tape* t = a.tape;
    check(a.cols() == b.cols(), "matmul_nt: shape mismatch");
    const int o = next_id(t);
    return t->push(a.value() * b.value().transpose(), any_grad({a, b}), [t, a, b, o] {
        const Matrix& g = t->grad(o);
        if (t->needs_grad(a.id)) t->grad(a.id).noalias() += g * t->value(b.id);
        if (t->needs_grad(b.id)) t->grad(b.id).noalias() += g.transpose() * t->value(a.id);
    });
}

Var transpose(Var a) {
    Tape* t = a.tape;
    const int o = next_id(t);
    return t->push(a.value().transpose(), any_grad({a}), [t, a, o] { t->grad(a.id) += t->grad(o).transpose(); });
}

Var add(Var a, Var b) {
    Tape* t = a.tape;
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    const int o = next_id(t);
    return t->push(a.value() + b.value(), any_grad({a, b}), [t, a, b, o] {
        if (t->needs_grad(a.id)) t->grad(a.id) += t->grad(o);
        if (t->needs_grad(b.id)) t->grad(b.id) += t->grad(o);
    });
}

Var sub(Var a, Var b) {
    Tape* t = a.tape;
    check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    const int o = next_id(t);
    return t->push(a.value() - b.value(), any_grad({a, b}), [t, a, b, o] {
        if (t->needs_grad(a.id)) t->grad(a.id) += t->grad(o);
        if (t->needs_grad(b.id)) t->grad(b.id) -= t->grad(o);
    });
}

Var hadamard(Var a, Var b) {
    Tape* t = a.tape;
    check(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
    const int o = next_id(t);
    return t->push(a.value().cwiseProduct(b.value()), any_grad({a, b}), [t, a, b, o] {
        const Matrix& g = t->grad(o);
        if (t->needs_grad(a.id)) t->grad(a.id) += g.cwiseProduct(t->value(b.id));
        if (t->needs_grad(b.id)) t->grad(b.id) += g.cwiseProduct(t->value(a.id));
    });
}

Var scale(Var a, double s) {
    Tape* t = a.tape;
    const int o = next_id(t);
    return t->push(a.value() * s, any_grad({a}), [t, a, s, o] { t->grad(a.id) += s * t->grad(o); });
}

Var add_row(Var a, Var r) {
    Tape* t = a.tape;
    check(r.rows() == 1 && r.cols() == a.cols(), "add_row: shape mismatch");
    const int o = next_id(t);
    Matrix v = a.value().rowwise() + r.value().row(0);
    return t->push(std::move(v), any_grad({a, r}), [t, a, r, o] {
        const Matrix& g = t->grad(o);
        if (t->needs_grad(a.id)) t->grad(a.id) += g;
        if (t->needs_grad(r.id)) t->grad(r.id) += g.colwise().sum();
    });
}

Var scale_rows(Var a, Var c) {
    Tape* t = a.tape;
    check(c.cols() == 1 && c.rows() == a.rows(), "scale_rows: shape mismatch");
    const int o = next_id(t);
    Matrix v = a.value().array().colwise() * c.value().col(0).array();
    return t->push(std::move(v), any_grad({a, c}), [t, a, c, o] {
        const Matrix& g = t->grad(o);
        if (t->needs_grad(a.id)) t->grad(a.id).array() += g.array().colwise() * t->value(c.id).col(0).array();
        if (t->needs_grad(c.id)) t->grad(c.id).col(0) += g.cwiseProduct(t->value(a.id)).rowwise().sum();
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: no inputs");
    Tape* t = parts.front().tape;
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    bool ng = false;
    for (const auto& p : parts) {
        check(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
        ng = ng || t->needs_grad(p.id);
    }
    Matrix v(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        v.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    const int o = next_id(t);
    return t->push(std::move(v), ng, [t, parts, o] {
        Eigen::Index r = 0;
        for (const auto& p : parts) {
            const Eigen::Index n = t->value(p.id).rows();
            if (t->needs_grad(p.id)) t->grad(p.id) += t->grad(o).middleRows(r, n);
            r += n;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: no inputs");
    Tape* t = parts.front().tape;
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    bool ng = false;
    for (const auto& p : parts) {
        check(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
        ng = ng || t->needs_grad(p.id);
    }
    Matrix v(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        v.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    const int o = next_id(t);
    return t->push(std::move(v), ng, [t, parts, o] {
        Eigen::Index c = 0;
        for (const auto& p : parts) {
            const Eigen::Index n = t->value(p.id).cols();
            if (t->needs_grad(p.id)) t->grad(p.id) += t->grad(o).middleCols(c, n);
            c += n;
        }
    });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
    Tape* t = a.tape;
    check(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows: out of range");
    const int o = next_id(t);
    return t->push(a.value().middleRows(begin, count), any_grad({a}),
                   [t, a, begin, count, o] { t->grad(a.id).middleRows(begin, count) += t->grad(o); });
}

Var row(Var a, Eigen::Index i) { return slice_rows(a, i, 1); }

Var element(Var a, Eigen::Index i, Eigen::Index j) {
    Tape* t = a.tape;
    check(i >= 0 && j >= 0 && i < a.rows() && j < a.cols(), "element: out of range");
    Matrix v(1, 1);
    v(0, 0) = a.value()(i, j);
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({a}), [t, a, i, j, o] { t->grad(a.id)(i, j) += t->grad(o)(0, 0); });
}

Var tanh(Var a) {
    Tape* t = a.tape;
    const int o = next_id(t);
    return t->push(a.value().array().tanh().matrix(), any_grad({a}), [t, a, o] {
        const Matrix& y = t->value(o);
        t->grad(a.id).array() += t->grad(o).array() * (1.0 - y.array().square());
    });
}

Var sigmoid(Var a) {
    Tape* t = a.tape;
    const int o = next_id(t);
    Matrix v = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
    return t->push(std::move(v), any_grad({a}), [t, a, o] {
        const Matrix& y = t->value(o);
        t->grad(a.id).array() += t->grad(o).array() * y.array() * (1.0 - y.array());
    });
}

Var sum(Var a) {
    Tape* t = a.tape;
    Matrix v(1, 1);
    v(0, 0) = a.value().sum();
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({a}), [t, a, o] { t->grad(a.id).array() += t->grad(o)(0, 0); });
}

Var mean_rows(Var a) {
    Tape* t = a.tape;
    check(a.rows() > 0, "mean_rows: empty input");
    const double n = static_cast<double>(a.rows());
    const int o = next_id(t);
    return t->push(a.value().colwise().mean(), any_grad({a}), [t, a, n, o] {
        t->grad(a.id).rowwise() += t->grad(o).row(0) / n;
    });
}

Var sum_rows(Var a, Eigen::Index begin, Eigen::Index end) {
    Tape* t = a.tape;
    check(begin >= 0 && begin <= end && end <= a.rows(), "sum_rows: out of range");
    Matrix v = a.value().middleRows(begin, end - begin).colwise().sum();
    if (begin == end) v = Matrix::Zero(1, a.cols());
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({a}), [t, a, begin, end, o] {
        t->grad(a.id).middleRows(begin, end - begin).rowwise() += t->grad(o).row(0);
    });
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        out.row(i) = (m.row(i).array() - mx).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

Var softmax_rows(Var a) {
    Tape* t = a.tape;
    const int o = next_id(t);
    return t->push(softmax_rows(a.value()), any_grad({a}), [t, a, o] {
        const Matrix& y = t->value(o);
        const Matrix& g = t->grad(o);
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        t->grad(a.id).array() += y.array() * (g.colwise() - dot).array();
    });
}

Var log_softmax_rows(Var a) {
    Tape* t = a.tape;
    const Matrix& x = a.value();
    Matrix v(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
        v.row(i) = x.row(i).array() - lse;
    }
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({a}), [t, a, o] {
        const Matrix p = t->value(o).array().exp().matrix();
        const Matrix& g = t->grad(o);
        const Eigen::VectorXd gs = g.rowwise().sum();
        t->grad(a.id) += g - (p.array().colwise() * gs.array()).matrix();
    });
}

Var logsumexp_rows(Var a) {
    Tape* t = a.tape;
    const Matrix& x = a.value();
    Matrix v(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        v(i, 0) = mx + std::log((x.row(i).array() - mx).exp().sum());
    }
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({a}), [t, a, o] {
        const Matrix& x = t->value(a.id);
        const Matrix& y = t->value(o);
        const Matrix& g = t->grad(o);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            t->grad(a.id).row(i).array() += g(i, 0) * (x.row(i).array() - y(i, 0)).exp();
    });
}

Var l2_normalize_rows(Var a, double eps) {
    Tape* t = a.tape;
    const Matrix& x = a.value();
    Eigen::VectorXd norms = (x.rowwise().squaredNorm().array() + eps).sqrt();
    Matrix v = x.array().colwise() / norms.array();
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({a}), [t, a, o, norms] {
        const Matrix& y = t->value(o);
        const Matrix& g = t->grad(o);
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        t->grad(a.id).array() += ((g - (y.array().colwise() * dot.array()).matrix()).array().colwise() / norms.array());
    });
}

Var gather_rows(Tape& tape, Parameter& table, const std::vector<int>& indices) {
    Matrix v(static_cast<Eigen::Index>(indices.size()), table.value.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        check(indices[i] >= 0 && indices[i] < table.value.rows(), "gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = table.value.row(indices[i]);
    }
    Tape* t = &tape;
    const int o = next_id(t);
    return t->push(std::move(v), true, [t, &table, indices, o] {
        ensure_grad(table);
        const Matrix& g = t->grad(o);
        for (std::size_t i = 0; i < indices.size(); ++i) table.grad.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var embedding_bag(Tape& tape, Parameter& table, const std::vector<std::vector<int>>& bags) {
    Matrix v = Matrix::Zero(static_cast<Eigen::Index>(bags.size()), table.value.cols());
    for (std::size_t i = 0; i < bags.size(); ++i) {
        if (bags[i].empty()) continue;
        for (int idx : bags[i]) {
            check(idx >= 0 && idx < table.value.rows(), "embedding_bag: index out of range");
            v.row(static_cast<Eigen::Index>(i)) += table.value.row(idx);
        }
        v.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(bags[i].size());
    }
    Tape* t = &tape;
    const int o = next_id(t);
    return t->push(std::move(v), true, [t, &table, bags, o] {
        ensure_grad(table);
        const Matrix& g = t->grad(o);
        for (std::size_t i = 0; i < bags.size(); ++i) {
            if (bags[i].empty()) continue;
            const double w = 1.0 / static_cast<double>(bags[i].size());
            for (int idx : bags[i]) table.grad.row(idx) += w * g.row(static_cast<Eigen::Index>(i));
        }
    });
}

Var bce_with_logits(Var logit, double label) {
    Tape* t = logit.tape;
    check(logit.value().size() == 1, "bce_with_logits: expected a scalar logit");
    const double z = logit.scalar();
    Matrix v(1, 1);
    // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    v(0, 0) = softplus(z) - label * z;
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({logit}), [t, logit, label, z, o] {
        t->grad(logit.id)(0, 0) += t->grad(o)(0, 0) * (stable_sigmoid(z) - label);
    });
}

Var cross_entropy(Var logits_row, Eigen::Index target) {
    check(logits_row.rows() == 1, "cross_entropy: expected a single row of logits");
    check(target >= 0 && target < logits_row.cols(), "cross_entropy: target out of range");
    return scale(element(log_softmax_rows(logits_row), 0, target), -1.0);
}

Var sequence_cross_entropy(Var logits, const std::vector<int>& targets) {
    Tape* t = logits.tape;
    check(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "sequence_cross_entropy: length mismatch");
    const Matrix& x = logits.value();
    Matrix probs = softmax_rows(x);
    double loss = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        check(targets[i] >= 0 && targets[i] < x.cols(), "sequence_cross_entropy: target out of range");
        const double mx = x.row(i).maxCoeff();
        const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
        loss += lse - x(i, targets[i]);
    }
    Matrix v(1, 1);
    v(0, 0) = loss;
    const int o = next_id(t);
    return t->push(std::move(v), any_grad({logits}), [t, logits, targets, o, probs = std::move(probs)] {
        Matrix g = probs;
        for (std::size_t i = 0; i < targets.size(); ++i) g(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
        t->grad(logits.id) += t->grad(o)(0, 0) * g;
    });
}

double sigmoid(double x) { return stable_sigmoid(x); }

}  // namespace kgd::ad
