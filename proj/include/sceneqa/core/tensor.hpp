#pragma once

// Reverse-mode automatic differentiation over row-major matrices.
//
// All node storage lives on a Tape; Tensor is a cheap {tape, index} handle.
// Recording order is creation order, so walking node indices backwards from
// the loss visits every node after all of its consumers. Backward closures
// capture node indices (never references) because the node vector may grow.
//
// Everything is templated on the scalar type: the same graph code runs in
// 64-bit for gradient checking and 32-bit for training throughput.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sceneqa/core/error.hpp"

namespace sceneqa {

template <class S>
class Tape;

template <class S>
struct ParamEntry {
    int rows = 0;
    int cols = 0;
    std::vector<S> value;
    std::vector<S> grad;
    bool trainable = true;

    std::size_t size() const { return value.size(); }
};

// Named, ordered parameter registry. Iteration order is the map order, so
// optimizer sweeps and checkpoints are deterministic by construction.
template <class S>
class ParamStore {
  public:
    ParamEntry<S>& add(const std::string& name, int rows, int cols) {
        if (rows <= 0 || cols <= 0)
            throw ShapeError("parameter '" + name + "' needs positive extents");
        if (entries_.count(name))
            throw ArgumentError("duplicate parameter name: " + name);
        ParamEntry<S>& e = entries_[name];
        e.rows = rows;
        e.cols = cols;
        e.value.assign(static_cast<std::size_t>(rows) * cols, S(0));
        e.grad.assign(e.value.size(), S(0));
        return e;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    ParamEntry<S>& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ArgumentError("unknown parameter: " + name);
        return it->second;
    }

    const ParamEntry<S>& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ArgumentError("unknown parameter: " + name);
        return it->second;
    }

    void zero_grads() {
        for (auto& [name, e] : entries_) std::fill(e.grad.begin(), e.grad.end(), S(0));
    }

    // Marks every parameter whose name starts with `prefix`.
    void set_trainable(const std::string& prefix, bool trainable) {
        for (auto& [name, e] : entries_)
            if (name.rfind(prefix, 0) == 0) e.trainable = trainable;
    }

    std::size_t count() const { return entries_.size(); }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

  private:
    std::map<std::string, ParamEntry<S>> entries_;
};

template <class S>
class Tensor {
  public:
    Tensor() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape<S>& tape() const { return *tape_; }
    int id() const { return id_; }

    int rows() const;
    int cols() const;
    std::size_t size() const { return static_cast<std::size_t>(rows()) * cols(); }
    bool requires_grad() const;
    const std::vector<S>& values() const;
    S at(int r, int c) const;
    // Value of a 1x1 tensor.
    S item() const;

  private:
    friend class Tape<S>;
    Tensor(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

    Tape<S>* tape_ = nullptr;
    int id_ = -1;
};

template <class S>
class Tape {
  public:
    struct Node {
        int rows = 0;
        int cols = 0;
        std::vector<S> value;
        std::vector<S> grad;
        bool requires_grad = false;
        std::function<void()> backward;  // unset for leaves
        const char* op = "leaf";
        ParamEntry<S>* binding = nullptr;  // set for tensors created by param()
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t node_count() const { return nodes_.size(); }
    Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    Tensor<S> make(int rows, int cols, std::vector<S> value, bool requires_grad, const char* op) {
        if (rows <= 0 || cols <= 0) {
            std::ostringstream os;
            os << op << ": extents must be positive, got " << rows << "x" << cols;
            throw ShapeError(os.str());
        }
        if (value.size() != static_cast<std::size_t>(rows) * cols)
            throw ShapeError(std::string(op) + ": value size does not match shape");
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.op = op;
        nodes_.push_back(std::move(n));
        int id = static_cast<int>(nodes_.size()) - 1;
        // Fail fast: every operation must yield finite values.
        for (S v : nodes_.back().value) {
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError(std::string(op) + " produced a non-finite value");
        }
        return Tensor<S>(this, id);
    }

    Tensor<S> constant(int rows, int cols, std::vector<S> value) {
        return make(rows, cols, std::move(value), false, "constant");
    }

    Tensor<S> scalar(S v) { return constant(1, 1, {v}); }

    Tensor<S> zeros(int rows, int cols) {
        return constant(rows, cols, std::vector<S>(static_cast<std::size_t>(rows) * cols, S(0)));
    }

    Tensor<S> full(int rows, int cols, S v) {
        return constant(rows, cols, std::vector<S>(static_cast<std::size_t>(rows) * cols, v));
    }

    // A differentiable leaf that is not tied to a ParamStore.
    Tensor<S> leaf(int rows, int cols, std::vector<S> value) {
        return make(rows, cols, std::move(value), true, "leaf");
    }

    // Copies the named parameter onto the tape. backward() adds the node's
    // gradient into the store entry, so repeated param() calls for the same
    // name accumulate correctly.
    Tensor<S> param(ParamStore<S>& store, const std::string& name) {
        ParamEntry<S>& e = store.at(name);
        Tensor<S> t = make(e.rows, e.cols, e.value, true, "param");
        nodes_.back().binding = &e;
        return t;
    }

    // Reverse sweep from a scalar loss. Gradients of bound parameters are
    // accumulated into their ParamStore entries.
    void backward(const Tensor<S>& loss) {
        if (!loss.valid() || &loss.tape() != this)
            throw ArgumentError("backward: loss does not live on this tape");
        Node& ln = node(loss.id());
        if (ln.rows != 1 || ln.cols != 1)
            throw ArgumentError("backward: loss must be a 1x1 tensor");
        if (!ln.requires_grad) return;  // nothing reaches any parameter
        for (Node& n : nodes_)
            if (n.requires_grad) n.grad.assign(n.value.size(), S(0));
        node(loss.id()).grad[0] = S(1);
        for (int id = loss.id(); id >= 0; --id) {
            Node& n = node(id);
            if (n.backward) n.backward();
        }
        for (Node& n : nodes_) {
            if (!n.binding || !n.requires_grad) continue;
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.binding->grad[i] += n.grad[i];
        }
    }

  private:
    std::vector<Node> nodes_;
};

template <class S>
int Tensor<S>::rows() const { return tape_->node(id_).rows; }
template <class S>
int Tensor<S>::cols() const { return tape_->node(id_).cols; }
template <class S>
bool Tensor<S>::requires_grad() const { return tape_->node(id_).requires_grad; }
template <class S>
const std::vector<S>& Tensor<S>::values() const { return tape_->node(id_).value; }

template <class S>
S Tensor<S>::at(int r, int c) const {
    const auto& n = tape_->node(id_);
    if (r < 0 || r >= n.rows || c < 0 || c >= n.cols)
        throw IndexError("tensor element access out of range");
    return n.value[static_cast<std::size_t>(r) * n.cols + c];
}

template <class S>
S Tensor<S>::item() const {
    const auto& n = tape_->node(id_);
    if (n.rows != 1 || n.cols != 1) throw ShapeError("item(): tensor is not 1x1");
    return n.value[0];
}

namespace detail {

template <class S>
std::string shape_str(const Tensor<S>& t) {
    std::ostringstream os;
    os << t.rows() << "x" << t.cols();
    return os.str();
}

template <class S>
void require_same_tape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (&a.tape() != &b.tape())
        throw ArgumentError(std::string(op) + ": operands live on different tapes");
}

template <class S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

}  // namespace detail

// ---- elementwise binary ----------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape("add", a, b);
    detail::require_same_shape("add", a, b);
    Tape<S>& t = a.tape();
    std::vector<S> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor<S> y = t.make(a.rows(), a.cols(), std::move(out), rg, "add");
    if (rg) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, bid, yid]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            auto& bn = t.node(bid);
            if (an.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
            if (bn.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i];
        };
    }
    return y;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape("sub", a, b);
    detail::require_same_shape("sub", a, b);
    Tape<S>& t = a.tape();
    std::vector<S> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor<S> y = t.make(a.rows(), a.cols(), std::move(out), rg, "sub");
    if (rg) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, bid, yid]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            auto& bn = t.node(bid);
            if (an.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
            if (bn.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] -= g[i];
        };
    }
    return y;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape("mul", a, b);
    detail::require_same_shape("mul", a, b);
    Tape<S>& t = a.tape();
    std::vector<S> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor<S> y = t.make(a.rows(), a.cols(), std::move(out), rg, "mul");
    if (rg) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, bid, yid]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            auto& bn = t.node(bid);
            if (an.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i] * bn.value[i];
            if (bn.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i] * an.value[i];
        };
    }
    return y;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
    Tape<S>& t = a.tape();
    std::vector<S> out(a.values());
    for (S& v : out) v = static_cast<S>(v * c);
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(a.rows(), a.cols(), std::move(out), rg, "scale");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, c]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            for (std::size_t i = 0; i < g.size(); ++i)
                an.grad[i] += static_cast<S>(g[i] * c);
        };
    }
    return y;
}

// Adds a 1xN row vector to every row of an MxN matrix.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& row) {
    detail::require_same_tape("add_rowvec", a, row);
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError("add_rowvec: expected 1x" + std::to_string(a.cols()) + " row, got " +
                         detail::shape_str(row));
    Tape<S>& t = a.tape();
    const int m = a.rows(), n = a.cols();
    std::vector<S> out(a.values());
    const auto& rv = row.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += rv[j];
    bool rg = a.requires_grad() || row.requires_grad();
    Tensor<S> y = t.make(m, n, std::move(out), rg, "add_rowvec");
    if (rg) {
        int aid = a.id(), rid = row.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, rid, yid, m, n]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            auto& rn = t.node(rid);
            if (an.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
            if (rn.requires_grad)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        rn.grad[j] += g[static_cast<std::size_t>(i) * n + j];
        };
    }
    return y;
}

// ---- linear algebra ---------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape("matmul", a, b);
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner extents differ, " + detail::shape_str(a) + " * " +
                         detail::shape_str(b));
    Tape<S>& t = a.tape();
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                S aip = av[static_cast<std::size_t>(i) * k + p];
                const S* brow = &bv[static_cast<std::size_t>(p) * n];
                S* orow = &out[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
        }
    }
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor<S> y = t.make(m, n, std::move(out), rg, "matmul");
    if (rg) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, bid, yid, m, k, n]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            auto& bn = t.node(bid);
            if (an.requires_grad) {  // dA += g * B^T
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < k; ++j) {
                        S acc = S(0);
                        const S* grow = &g[static_cast<std::size_t>(i) * n];
                        const S* brow = &bn.value[static_cast<std::size_t>(j) * n];
                        for (int p = 0; p < n; ++p) acc += grow[p] * brow[p];
                        an.grad[static_cast<std::size_t>(i) * k + j] += acc;
                    }
                }
            }
            if (bn.requires_grad) {  // dB += A^T * g
                for (int p = 0; p < m; ++p) {
                    const S* arow = &an.value[static_cast<std::size_t>(p) * k];
                    const S* grow = &g[static_cast<std::size_t>(p) * n];
                    for (int i = 0; i < k; ++i) {
                        S api = arow[i];
                        S* brow = &bn.grad[static_cast<std::size_t>(i) * n];
                        for (int j = 0; j < n; ++j) brow[j] += api * grow[j];
                    }
                }
            }
        };
    }
    return y;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    Tape<S>& t = a.tape();
    const int m = a.rows(), n = a.cols();
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    const auto& av = a.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(n, m, std::move(out), rg, "transpose");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, m, n]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an.grad[static_cast<std::size_t>(i) * n + j] +=
                        g[static_cast<std::size_t>(j) * m + i];
        };
    }
    return y;
}

// ---- structural -------------------------------------------------------------

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
    Tape<S>& t = parts[0].tape();
    const int n = parts[0].cols();
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::require_same_tape("concat_rows", parts[0], p);
        if (p.cols() != n)
            throw ShapeError("concat_rows: column mismatch " + detail::shape_str(parts[0]) +
                             " vs " + detail::shape_str(p));
        total += p.rows();
        rg = rg || p.requires_grad();
    }
    std::vector<S> out;
    out.reserve(static_cast<std::size_t>(total) * n);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor<S> y = t.make(total, n, std::move(out), rg, "concat_rows");
    if (rg) {
        std::vector<int> ids;
        for (const auto& p : parts) ids.push_back(p.id());
        int yid = y.id();
        t.node(yid).backward = [&t, ids, yid]() {
            const auto& g = t.node(yid).grad;
            std::size_t off = 0;
            for (int id : ids) {
                auto& pn = t.node(id);
                if (pn.requires_grad)
                    for (std::size_t i = 0; i < pn.value.size(); ++i) pn.grad[i] += g[off + i];
                off += pn.value.size();
            }
        };
    }
    return y;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
    Tape<S>& t = parts[0].tape();
    const int m = parts[0].rows();
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::require_same_tape("concat_cols", parts[0], p);
        if (p.rows() != m)
            throw ShapeError("concat_cols: row mismatch " + detail::shape_str(parts[0]) + " vs " +
                             detail::shape_str(p));
        total += p.cols();
        rg = rg || p.requires_grad();
    }
    std::vector<S> out(static_cast<std::size_t>(m) * total);
    int coff = 0;
    for (const auto& p : parts) {
        const auto& pv = p.values();
        const int pc = p.cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
                out[static_cast<std::size_t>(i) * total + coff + j] =
                    pv[static_cast<std::size_t>(i) * pc + j];
        coff += pc;
    }
    Tensor<S> y = t.make(m, total, std::move(out), rg, "concat_cols");
    if (rg) {
        std::vector<int> ids;
        for (const auto& p : parts) ids.push_back(p.id());
        int yid = y.id();
        t.node(yid).backward = [&t, ids, yid, m, total]() {
            const auto& g = t.node(yid).grad;
            int coff2 = 0;
            for (int id : ids) {
                auto& pn = t.node(id);
                const int pc = pn.cols;
                if (pn.requires_grad)
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pc; ++j)
                            pn.grad[static_cast<std::size_t>(i) * pc + j] +=
                                g[static_cast<std::size_t>(i) * total + coff2 + j];
                coff2 += pc;
            }
        };
    }
    return y;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, int first, int count) {
    if (first < 0 || count <= 0 || first + count > a.rows())
        throw IndexError("slice_rows: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " + std::to_string(a.rows()) +
                         " rows");
    Tape<S>& t = a.tape();
    const int n = a.cols();
    const auto& av = a.values();
    std::vector<S> out(av.begin() + static_cast<std::size_t>(first) * n,
                       av.begin() + static_cast<std::size_t>(first + count) * n);
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(count, n, std::move(out), rg, "slice_rows");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, first, n]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            std::size_t off = static_cast<std::size_t>(first) * n;
            for (std::size_t i = 0; i < g.size(); ++i) an.grad[off + i] += g[i];
        };
    }
    return y;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int first, int count) {
    if (first < 0 || count <= 0 || first + count > a.cols())
        throw IndexError("slice_cols: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " + std::to_string(a.cols()) +
                         " cols");
    Tape<S>& t = a.tape();
    const int m = a.rows(), n = a.cols();
    std::vector<S> out(static_cast<std::size_t>(m) * count);
    const auto& av = a.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
            out[static_cast<std::size_t>(i) * count + j] =
                av[static_cast<std::size_t>(i) * n + first + j];
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(m, count, std::move(out), rg, "slice_cols");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, first, m, n, count]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < count; ++j)
                    an.grad[static_cast<std::size_t>(i) * n + first + j] +=
                        g[static_cast<std::size_t>(i) * count + j];
        };
    }
    return y;
}

// Row gather; duplicate indices are allowed and their gradients accumulate.
template <class S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<int>& indices) {
    if (indices.empty()) throw ArgumentError("gather_rows: no indices");
    Tape<S>& t = a.tape();
    const int m = a.rows(), n = a.cols();
    for (int idx : indices)
        if (idx < 0 || idx >= m)
            throw IndexError("gather_rows: index " + std::to_string(idx) + " outside " +
                             std::to_string(m) + " rows");
    std::vector<S> out(indices.size() * static_cast<std::size_t>(n));
    const auto& av = a.values();
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(av.begin() + static_cast<std::size_t>(indices[i]) * n, n,
                    out.begin() + i * static_cast<std::size_t>(n));
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(static_cast<int>(indices.size()), n, std::move(out), rg, "gather_rows");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, indices, n]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (int j = 0; j < n; ++j)
                    an.grad[static_cast<std::size_t>(indices[i]) * n + j] +=
                        g[i * static_cast<std::size_t>(n) + j];
        };
    }
    return y;
}

// ---- reductions -------------------------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
    Tape<S>& t = a.tape();
    S acc = S(0);
    for (S v : a.values()) acc += v;
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(1, 1, {acc}, rg, "sum_all");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid]() {
            S g = t.node(yid).grad[0];
            auto& an = t.node(aid);
            for (S& gv : an.grad) gv += g;
        };
    }
    return y;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// Column-wise max over all rows: MxN -> 1xN. Ties route the gradient to the
// first (lowest index) maximal row, mirroring the forward argmax.
template <class S>
Tensor<S> max_over_rows(const Tensor<S>& a) {
    Tape<S>& t = a.tape();
    const int m = a.rows(), n = a.cols();
    std::vector<S> out(static_cast<std::size_t>(n));
    std::vector<int> arg(static_cast<std::size_t>(n), 0);
    const auto& av = a.values();
    for (int j = 0; j < n; ++j) {
        S best = av[j];
        int bi = 0;
        for (int i = 1; i < m; ++i) {
            S v = av[static_cast<std::size_t>(i) * n + j];
            if (v > best) {
                best = v;
                bi = i;
            }
        }
        out[j] = best;
        arg[j] = bi;
    }
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(1, n, std::move(out), rg, "max_over_rows");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, arg, n]() {
            const auto& g = t.node(yid).grad;
            auto& an = t.node(aid);
            for (int j = 0; j < n; ++j)
                an.grad[static_cast<std::size_t>(arg[j]) * n + j] += g[j];
        };
    }
    return y;
}

// ---- elementwise unary ------------------------------------------------------

namespace detail {

template <class S, class F, class DF>
Tensor<S> unary_op(const Tensor<S>& a, const char* name, F f, DF df) {
    Tape<S>& t = a.tape();
    std::vector<S> out(a.values());
    for (S& v : out) v = f(v);
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(a.rows(), a.cols(), std::move(out), rg, name);
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, df]() {
            const auto& yn = t.node(yid);
            auto& an = t.node(aid);
            for (std::size_t i = 0; i < yn.grad.size(); ++i)
                an.grad[i] += yn.grad[i] * df(an.value[i], yn.value[i]);
        };
    }
    return y;
}

}  // namespace detail

// Exact (erf based) GELU.
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
    const double inv_sqrt2 = 0.70710678118654752440084436210485;
    const double inv_sqrt2pi = 0.39894228040143267793994605993438;
    return detail::unary_op(
        a, "gelu",
        [=](S x) {
            double xd = static_cast<double>(x);
            return static_cast<S>(0.5 * xd * (1.0 + std::erf(xd * inv_sqrt2)));
        },
        [=](S x, S) {
            double xd = static_cast<double>(x);
            double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<S>(cdf + xd * pdf);
        });
}

template <class S>
Tensor<S> tanh_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "tanh", [](S x) { return static_cast<S>(std::tanh(static_cast<double>(x))); },
        [](S, S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return detail::unary_op(
        a, "sigmoid",
        [](S x) {
            double xd = static_cast<double>(x);
            if (xd >= 0.0) return static_cast<S>(1.0 / (1.0 + std::exp(-xd)));
            double e = std::exp(xd);
            return static_cast<S>(e / (1.0 + e));
        },
        [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> exp_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "exp", [](S x) { return static_cast<S>(std::exp(static_cast<double>(x))); },
        [](S, S y) { return y; });
}

template <class S>
Tensor<S> log_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "log", [](S x) { return static_cast<S>(std::log(static_cast<double>(x))); },
        [](S x, S) { return S(1) / x; });
}

template <class S>
Tensor<S> abs_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "abs", [](S x) { return x < S(0) ? -x : x; },
        [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

// ---- normalized / composite -------------------------------------------------

// Row-wise softmax with max subtraction; never overflows on large logits.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
    Tape<S>& t = a.tape();
    const int m = a.rows(), n = a.cols();
    std::vector<S> out(a.values());
    for (int i = 0; i < m; ++i) {
        S* row = &out[static_cast<std::size_t>(i) * n];
        S mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(static_cast<double>(row[j] - mx));
            row[j] = static_cast<S>(e);
            sum += e;
        }
        for (int j = 0; j < n; ++j) row[j] = static_cast<S>(row[j] / sum);
    }
    bool rg = a.requires_grad();
    Tensor<S> y = t.make(m, n, std::move(out), rg, "softmax");
    if (rg) {
        int aid = a.id(), yid = y.id();
        t.node(yid).backward = [&t, aid, yid, m, n]() {
            const auto& yn = t.node(yid);
            auto& an = t.node(aid);
            for (int i = 0; i < m; ++i) {
                const S* p = &yn.value[static_cast<std::size_t>(i) * n];
                const S* g = &yn.grad[static_cast<std::size_t>(i) * n];
                S dot = S(0);
                for (int j = 0; j < n; ++j) dot += p[j] * g[j];
                S* ag = &an.grad[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) ag[j] += p[j] * (g[j] - dot);
            }
        };
    }
    return y;
}

// Row-wise layer normalization with learnable 1xN gain and bias.
template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                          double eps = 1e-5) {
    detail::require_same_tape("layer_norm", x, gain);
    detail::require_same_tape("layer_norm", x, bias);
    const int m = x.rows(), n = x.cols();
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
    Tape<S>& t = x.tape();
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    std::vector<S> xhat(out.size());
    std::vector<S> inv_std(static_cast<std::size_t>(m));
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    for (int i = 0; i < m; ++i) {
        const S* row = &xv[static_cast<std::size_t>(i) * n];
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += static_cast<double>(row[j]);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = static_cast<double>(row[j]) - mu;
            var += d * d;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = static_cast<S>(inv);
        for (int j = 0; j < n; ++j) {
            std::size_t k = static_cast<std::size_t>(i) * n + j;
            S xh = static_cast<S>((static_cast<double>(row[j]) - mu) * inv);
            xhat[k] = xh;
            out[k] = xh * gv[j] + bv[j];
        }
    }
    bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor<S> y = t.make(m, n, std::move(out), rg, "layer_norm");
    if (rg) {
        int xid = x.id(), gid = gain.id(), bid = bias.id(), yid = y.id();
        t.node(yid).backward = [&t, xid, gid, bid, yid, m, n, xhat, inv_std]() {
            const auto& g = t.node(yid).grad;
            auto& xn = t.node(xid);
            auto& gn = t.node(gid);
            auto& bn = t.node(bid);
            for (int i = 0; i < m; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * n;
                if (bn.requires_grad)
                    for (int j = 0; j < n; ++j) bn.grad[j] += g[off + j];
                if (gn.requires_grad)
                    for (int j = 0; j < n; ++j) gn.grad[j] += g[off + j] * xhat[off + j];
                if (xn.requires_grad) {
                    // h = g * gain; dx = inv_std * (h - mean(h) - xhat * mean(h*xhat))
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double h = static_cast<double>(g[off + j]) *
                                   static_cast<double>(gn.value[j]);
                        mean_h += h;
                        mean_hx += h * static_cast<double>(xhat[off + j]);
                    }
                    mean_h /= n;
                    mean_hx /= n;
                    double inv = static_cast<double>(inv_std[static_cast<std::size_t>(i)]);
                    for (int j = 0; j < n; ++j) {
                        double h = static_cast<double>(g[off + j]) *
                                   static_cast<double>(gn.value[j]);
                        xn.grad[off + j] += static_cast<S>(
                            inv * (h - mean_h - static_cast<double>(xhat[off + j]) * mean_hx));
                    }
                }
            }
        };
    }
    return y;
}

// Token-wise cross entropy over TxV logits, averaged over masked positions.
// Uses log-sum-exp with max subtraction, so huge logits stay finite.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                        const std::vector<bool>& mask) {
    const int tn = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != tn || static_cast<int>(mask.size()) != tn)
        throw ShapeError("cross_entropy: expected " + std::to_string(tn) +
                         " targets and mask flags");
    int active = 0;
    for (int i = 0; i < tn; ++i) {
        if (!mask[i]) continue;
        ++active;
        if (targets[i] < 0 || targets[i] >= v)
            throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                             " outside vocabulary of " + std::to_string(v) + " at position " +
                             std::to_string(i));
    }
    if (active == 0) throw ArgumentError("cross_entropy: no unmasked positions");
    Tape<S>& t = logits.tape();
    const auto& lv = logits.values();
    std::vector<S> probs(lv.size(), S(0));  // saved softmax rows for backward
    double total = 0.0;
    for (int i = 0; i < tn; ++i) {
        if (!mask[i]) continue;
        const S* row = &lv[static_cast<std::size_t>(i) * v];
        double mx = static_cast<double>(row[0]);
        for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        double lse = mx + std::log(sum);
        total += lse - static_cast<double>(row[targets[i]]);
        for (int j = 0; j < v; ++j)
            probs[static_cast<std::size_t>(i) * v + j] =
                static_cast<S>(std::exp(static_cast<double>(row[j]) - lse));
    }
    bool rg = logits.requires_grad();
    Tensor<S> y = t.make(1, 1, {static_cast<S>(total / active)}, rg, "cross_entropy");
    if (rg) {
        int lid = logits.id(), yid = y.id();
        t.node(yid).backward = [&t, lid, yid, targets, mask, probs, tn, v, active]() {
            S g = t.node(yid).grad[0];
            auto& ln = t.node(lid);
            const S inv = static_cast<S>(1.0 / active);
            for (int i = 0; i < tn; ++i) {
                if (!mask[i]) continue;
                for (int j = 0; j < v; ++j) {
                    S p = probs[static_cast<std::size_t>(i) * v + j];
                    S ind = (j == targets[i]) ? S(1) : S(0);
                    ln.grad[static_cast<std::size_t>(i) * v + j] += g * (p - ind) * inv;
                }
            }
        };
    }
    return y;
}

// Mean binary cross entropy over an Mx1 probability column. Probabilities are
// clamped away from 0/1 inside the log only, so saturated predictions that
// match their target contribute exactly zero loss.
template <class S>
Tensor<S> binary_cross_entropy(const Tensor<S>& probs, const std::vector<S>& targets) {
    const int m = probs.rows();
    if (probs.cols() != 1) throw ShapeError("binary_cross_entropy: expected an Mx1 column");
    if (static_cast<int>(targets.size()) != m)
        throw ShapeError("binary_cross_entropy: expected " + std::to_string(m) + " targets");
    for (S y : targets)
        if (y < S(0) || y > S(1))
            throw ArgumentError("binary_cross_entropy: targets must lie in [0, 1]");
    Tape<S>& t = probs.tape();
    const double tiny = 1e-12;
    const auto& pv = probs.values();
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        double p = static_cast<double>(pv[i]);
        if (p < 0.0 || p > 1.0)
            throw ArgumentError("binary_cross_entropy: probabilities must lie in [0, 1]");
        double yd = static_cast<double>(targets[i]);
        total -= yd * std::log(std::max(p, tiny)) + (1.0 - yd) * std::log(std::max(1.0 - p, tiny));
    }
    bool rg = probs.requires_grad();
    Tensor<S> y = t.make(1, 1, {static_cast<S>(total / m)}, rg, "binary_cross_entropy");
    if (rg) {
        int pid = probs.id(), yid = y.id();
        t.node(yid).backward = [&t, pid, yid, targets, m, tiny]() {
            S g = t.node(yid).grad[0];
            auto& pn = t.node(pid);
            for (int i = 0; i < m; ++i) {
                double p = static_cast<double>(pn.value[i]);
                double yd = static_cast<double>(targets[i]);
                double d = -yd / std::max(p, tiny) + (1.0 - yd) / std::max(1.0 - p, tiny);
                pn.grad[i] += static_cast<S>(static_cast<double>(g) * d / m);
            }
        };
    }
    return y;
}

}  // namespace sceneqa
