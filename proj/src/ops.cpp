#include "moma/ops.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <mutex>
#include <thread>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace moma::ops {

namespace {

thread_local uint64_t g_flops = 0;

// One helper thread; ranges are split the same way for a given n, so results
// are deterministic for a fixed input.
class SplitRunner {
public:
    static SplitRunner& instance() {
        static SplitRunner runner;
        return runner;
    }

    void run(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        // only the owning thread splits; others (e.g. parallel ablate cells)
        // run inline so the helper is never contended
        if (n < grain || std::this_thread::get_id() != owner_) {
            fn(0, n);
            return;
        }
        const int64_t mid = n / 2;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            task_ = [&fn, mid] { fn(0, mid); };
            has_task_ = true;
        }
        cv_.notify_one();
        fn(mid, n);
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [this] { return !has_task_ && !running_; });
    }

private:
    SplitRunner() {
        openblas_set_num_threads(1);  // the split below owns both cores
        worker_ = std::thread([this] { loop(); });
    }
    ~SplitRunner() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
        }
        cv_.notify_one();
        worker_.join();
    }

    void loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [this] { return has_task_ || stop_; });
                if (stop_) return;
                task = std::move(task_);
                has_task_ = false;
                running_ = true;
            }
            task();
            {
                std::unique_lock<std::mutex> lock(mutex_);
                running_ = false;
            }
            done_cv_.notify_one();
        }
    }

    std::thread worker_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    std::function<void()> task_;
    bool has_task_ = false;
    bool running_ = false;
    bool stop_ = false;
};

// Disjoint [begin, end) slices; fn must not touch shared accumulators.
inline void parallel_ranges(int64_t n, int64_t grain,
                            const std::function<void(int64_t, int64_t)>& fn) {
    SplitRunner::instance().run(n, grain, fn);
}

template <typename S>
GraphT<S>* tape_for(std::initializer_list<const TensorT<S>*> inputs) {
    if (!GradMode::enabled()) return nullptr;
    GraphT<S>* g = GraphT<S>::current();
    if (!g) return nullptr;
    for (const TensorT<S>* t : inputs)
        if (tracked(*t, g)) return g;
    return nullptr;
}

template <typename S>
void record(GraphT<S>* g, const char* tag, TensorT<S>& out,
            typename GraphT<S>::BackwardFn fn) {
    if (!g) return;
    out.set_graph_node(g->add_node(tag, std::move(fn)), g->epoch());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `in` aligned to the trailing dims of `out`, with zero
// stride on broadcast dimensions.
std::vector<int64_t> padded_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    for (size_t i = 0; i < in.size(); ++i) {
        const size_t ii = in.size() - 1 - i;
        const size_t oi = out.size() - 1 - i;
        strides[oi] = in[ii] == 1 ? 0 : s;
        s *= in[ii];
    }
    // Broadcast against a larger out dim forces stride 0.
    for (size_t i = 0; i < out.size(); ++i) {
        const size_t ii = i + in.size() - out.size();
        if (i < out.size() - in.size() || (in[ii] == 1 && out[i] != 1)) strides[i] = 0;
    }
    return strides;
}

// Iterates every element of out_shape, maintaining offsets into two broadcast
// inputs. f(out_index, a_offset, b_offset).
template <typename F>
void for_each_broadcast2(const Shape& out, const std::vector<int64_t>& sa,
                         const std::vector<int64_t>& sb, F&& f) {
    const int64_t total = numel_of(out);
    const int rank = static_cast<int>(out.size());
    std::vector<int64_t> idx(out.size(), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
        }
    }
}

// True when `in` (leading 1s stripped) equals the trailing dims of `out`, so
// broadcasting repeats `in` as contiguous rows.
bool is_trailing_suffix(const Shape& in, const Shape& out, int64_t& run) {
    size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const size_t rest = in.size() - lead;
    if (rest > out.size()) return false;
    run = 1;
    for (size_t i = 0; i < rest; ++i) {
        if (in[lead + i] != out[out.size() - rest + i]) return false;
        run *= in[lead + i];
    }
    return true;
}

// Accumulates `g` (shape gs) into `sink` shaped `target`, inverse of
// broadcasting.
template <typename S>
void reduce_into(std::span<const S> g, const Shape& gs, const Shape& target,
                 std::vector<S>& sink) {
    if (gs == target) {
        for (size_t i = 0; i < sink.size(); ++i) sink[i] += g[i];
        return;
    }
    int64_t run = 0;
    if (is_trailing_suffix(target, gs, run) && run == static_cast<int64_t>(sink.size())) {
        const int64_t rows = static_cast<int64_t>(g.size()) / run;
        for (int64_t r = 0; r < rows; ++r) {
            const S* src = g.data() + r * run;
            for (int64_t j = 0; j < run; ++j) sink[static_cast<size_t>(j)] += src[j];
        }
        return;
    }
    const auto st = padded_strides(target, gs);
    const auto sg = padded_strides(gs, gs);
    for_each_broadcast2(gs, st, sg,
                        [&](int64_t, int64_t to, int64_t go) { sink[to] += g[go]; });
}

template <typename S>
void reduce_accumulate(BackwardPassT<S>& pass, const TensorT<S>& t, std::span<const S> g,
                       const Shape& gs) {
    if (auto* sink = pass.sink(t)) reduce_into<S>(g, gs, t.shape(), *sink);
}

template <typename S, typename FwdF>
TensorT<S> binary_elementwise(const char* op, const TensorT<S>& a, const TensorT<S>& b, FwdF f) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    std::vector<S> out(static_cast<size_t>(numel_of(out_shape)));
    auto pa = a.data();
    auto pb = b.data();
    int64_t run = 0;
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
    } else if (out_shape == a.shape() && is_trailing_suffix(b.shape(), out_shape, run) &&
               run == b.numel()) {
        // bias / position-table pattern: b repeats as contiguous rows of a
        const int64_t rows = a.numel() / run;
        for (int64_t r = 0; r < rows; ++r) {
            const S* ra = pa.data() + r * run;
            S* ro = out.data() + r * run;
            for (int64_t j = 0; j < run; ++j) ro[j] = f(ra[j], pb[j]);
        }
    } else if (out_shape == b.shape() && is_trailing_suffix(a.shape(), out_shape, run) &&
               run == a.numel()) {
        const int64_t rows = b.numel() / run;
        for (int64_t r = 0; r < rows; ++r) {
            const S* rb = pb.data() + r * run;
            S* ro = out.data() + r * run;
            for (int64_t j = 0; j < run; ++j) ro[j] = f(pa[j], rb[j]);
        }
    } else {
        const auto sa = padded_strides(a.shape(), out_shape);
        const auto sb = padded_strides(b.shape(), out_shape);
        for_each_broadcast2(out_shape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
            out[i] = f(pa[oa], pb[ob]);
        });
    }
    return TensorT<S>(out_shape, std::move(out));
}

inline void gemm_dispatch(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const float* a,
                          int64_t lda, const float* b, int64_t ldb, float* c) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), 0.0f, c, static_cast<int>(n));
}

inline void gemm_dispatch(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const double* a,
                          int64_t lda, const double* b, int64_t ldb, double* c) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), 0.0, c, static_cast<int>(n));
}

// Batched matrix product with optional per-slice transposes; batch dims
// broadcast. Values only (no tape) so backward can reuse it.
template <typename S>
TensorT<S> matmul_raw(const TensorT<S>& a, const TensorT<S>& b, bool ta, bool tb) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: rank must be >= 2, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t ar = a.dim(-2), ac = a.dim(-1);
    const int64_t br = b.dim(-2), bc = b.dim(-1);
    const int64_t m = ta ? ac : ar, ka = ta ? ar : ac;
    const int64_t kb = tb ? bc : br, n = tb ? br : bc;
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (ta ? "^T" : "") + " x " + shape_str(b.shape()) + (tb ? "^T" : ""));

    const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    const Shape batch_b(b.shape().begin(), b.shape().end() - 2);

    // Single flattened GEMM when the rhs is one plain matrix.
    if (batch_b.empty() && !ta) {
        const int64_t rows = a.numel() / ac;
        std::vector<S> out(static_cast<size_t>(rows * n));
        gemm_dispatch(false, tb, rows, n, ka, a.data().data(), ac, b.data().data(), bc,
                      out.data());
        g_flops += static_cast<uint64_t>(2 * rows * n * ka);
        Shape out_shape(a.shape().begin(), a.shape().end() - 1);
        out_shape.push_back(n);
        return TensorT<S>(std::move(out_shape), std::move(out));
    }

    Shape batch = broadcast_shape(batch_a, batch_b, "matmul");
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<S> out(static_cast<size_t>(numel_of(out_shape)));

    const int64_t slices = numel_of(batch);
    const int64_t a_slice = ar * ac, b_slice = br * bc, o_slice = m * n;
    auto sa = padded_strides(batch_a, batch);
    auto sb = padded_strides(batch_b, batch);
    for (auto& s : sa) s *= a_slice;
    for (auto& s : sb) s *= b_slice;

    const S* pa = a.data().data();
    const S* pb = b.data().data();
    if (slices == 1) {
        gemm_dispatch(ta, tb, m, n, ka, pa, ac, pb, bc, out.data());
    } else {
        std::vector<int64_t> idx(batch.size(), 0);
        int64_t oa = 0, ob = 0;
        for (int64_t s = 0; s < slices; ++s) {
            gemm_dispatch(ta, tb, m, n, ka, pa + oa, ac, pb + ob, bc, out.data() + s * o_slice);
            for (int d = static_cast<int>(batch.size()) - 1; d >= 0; --d) {
                ++idx[d];
                oa += sa[d];
                ob += sb[d];
                if (idx[d] < batch[d]) break;
                idx[d] = 0;
                oa -= sa[d] * batch[d];
                ob -= sb[d] * batch[d];
            }
        }
    }
    g_flops += static_cast<uint64_t>(2 * slices * m * n * ka);
    return TensorT<S>(std::move(out_shape), std::move(out));
}

template <typename S>
std::vector<S> transpose_raw(std::span<const S> x, const Shape& shape, int64_t a, int64_t b,
                             Shape& out_shape) {
    out_shape = shape;
    std::swap(out_shape[static_cast<size_t>(a)], out_shape[static_cast<size_t>(b)]);
    std::vector<int64_t> in_strides(shape.size());
    int64_t s = 1;
    for (size_t i = shape.size(); i-- > 0;) {
        in_strides[i] = s;
        s *= shape[i];
    }
    std::swap(in_strides[static_cast<size_t>(a)], in_strides[static_cast<size_t>(b)]);

    std::vector<S> out(x.size());
    const int rank = static_cast<int>(out_shape.size());

    // dims after the last swapped axis stay contiguous: copy them as runs
    const int64_t hi = std::max(a, b);
    int64_t run = 1;
    for (int64_t d = hi + 1; d < rank; ++d) run *= out_shape[static_cast<size_t>(d)];
    if (hi + 1 < rank && run > 1) {
        const int outer_rank = static_cast<int>(hi) + 1;
        std::vector<int64_t> idx(static_cast<size_t>(outer_rank), 0);
        int64_t off = 0;
        const int64_t outer_total = static_cast<int64_t>(x.size()) / run;
        for (int64_t i = 0; i < outer_total; ++i) {
            std::memcpy(out.data() + i * run, x.data() + off, static_cast<size_t>(run) * sizeof(S));
            for (int d = outer_rank - 1; d >= 0; --d) {
                ++idx[d];
                off += in_strides[d];
                if (idx[d] < out_shape[d]) break;
                idx[d] = 0;
                off -= in_strides[d] * out_shape[d];
            }
        }
        return out;
    }

    std::vector<int64_t> idx(out_shape.size(), 0);
    int64_t off = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = x[off];
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            off += in_strides[d];
            if (idx[d] < out_shape[d]) break;
            idx[d] = 0;
            off -= in_strides[d] * out_shape[d];
        }
    }
    return out;
}

int64_t normalize_axis(int64_t axis, int64_t rank, const char* op) {
    const int64_t a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
    return a;
}

template <typename S>
void axis_extents(const TensorT<S>& x, int64_t axis, int64_t& outer, int64_t& len,
                  int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
    len = x.dim(axis);
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
}

template <typename S>
void check_equal_token_counts(const std::vector<std::vector<int64_t>>& indices, const char* op) {
    for (size_t b = 1; b < indices.size(); ++b)
        if (indices[b].size() != indices[0].size())
            throw ShapeError(std::string(op) + ": sample " + std::to_string(b) + " has " +
                             std::to_string(indices[b].size()) + " indices, sample 0 has " +
                             std::to_string(indices[0].size()));
}

}  // namespace

uint64_t flop_count() { return g_flops; }
void reset_flop_count() { g_flops = 0; }

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = binary_elementwise<S>("add", a, b, [](S x, S y) { return x + y; });
    if (GraphT<S>* g = tape_for<S>({&a, &b}))
        record(g, "add", out, [a, b, gs = out.shape()](std::span<const S> go, BackwardPassT<S>& p) {
            reduce_accumulate(p, a, go, gs);
            reduce_accumulate(p, b, go, gs);
        });
    return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = binary_elementwise<S>("sub", a, b, [](S x, S y) { return x - y; });
    if (GraphT<S>* g = tape_for<S>({&a, &b}))
        record(g, "sub", out, [a, b, gs = out.shape()](std::span<const S> go, BackwardPassT<S>& p) {
            reduce_accumulate(p, a, go, gs);
            if (p.sink(b)) {
                std::vector<S> neg(go.begin(), go.end());
                for (S& v : neg) v = -v;
                reduce_into<S>(neg, gs, b.shape(), *p.sink(b));
            }
        });
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = binary_elementwise<S>("mul", a, b, [](S x, S y) { return x * y; });
    if (GraphT<S>* g = tape_for<S>({&a, &b}))
        record(g, "mul", out, [a, b, gs = out.shape()](std::span<const S> go, BackwardPassT<S>& p) {
            if (a.shape() == b.shape()) {
                if (auto* sa = p.sink(a)) {
                    auto pb = b.data();
                    for (size_t i = 0; i < sa->size(); ++i) (*sa)[i] += go[i] * pb[i];
                }
                if (auto* sb = p.sink(b)) {
                    auto pa = a.data();
                    for (size_t i = 0; i < sb->size(); ++i) (*sb)[i] += go[i] * pa[i];
                }
                return;
            }
            const auto sa = padded_strides(a.shape(), gs);
            const auto sb = padded_strides(b.shape(), gs);
            if (p.sink(a)) {
                std::vector<S> da(go.size());
                auto pb = b.data();
                for_each_broadcast2(gs, sa, sb, [&](int64_t i, int64_t, int64_t ob) {
                    da[i] = go[i] * pb[ob];
                });
                reduce_into<S>(da, gs, a.shape(), *p.sink(a));
            }
            if (p.sink(b)) {
                std::vector<S> db(go.size());
                auto pa = a.data();
                for_each_broadcast2(gs, sa, sb, [&](int64_t i, int64_t oa, int64_t) {
                    db[i] = go[i] * pa[oa];
                });
                reduce_into<S>(db, gs, b.shape(), *p.sink(b));
            }
        });
    return out;
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
    std::vector<S> out(a.data().begin(), a.data().end());
    for (S& v : out) v += c;
    TensorT<S> t(a.shape(), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&a}))
        record(g, "add_scalar", t,
               [a](std::span<const S> go, BackwardPassT<S>& p) { p.accumulate(a, go); });
    return t;
}

template <typename S>
TensorT<S> mul_scalar(const TensorT<S>& a, S c) {
    std::vector<S> out(a.data().begin(), a.data().end());
    for (S& v : out) v *= c;
    TensorT<S> t(a.shape(), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&a}))
        record(g, "mul_scalar", t, [a, c](std::span<const S> go, BackwardPassT<S>& p) {
            if (auto* s = p.sink(a))
                for (size_t i = 0; i < s->size(); ++i) (*s)[i] += go[i] * c;
        });
    return t;
}

template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
    constexpr S kSqrt2OverPi = S(0.7978845608028654);
    constexpr S kCubic = S(0.044715);
    std::vector<S> out(static_cast<size_t>(x.numel()));
    auto px = x.data();
    const S* in = px.data();
    S* po = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const S v = in[i];
        const S u = kSqrt2OverPi * (v + kCubic * v * v * v);
        po[i] = S(0.5) * v * (S(1) + std::tanh(u));
    }
    TensorT<S> t(x.shape(), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "gelu", t, [x](std::span<const S> go, BackwardPassT<S>& p) {
            auto* s = p.sink(x);
            if (!s) return;
            const S* in = x.data().data();
            S* sink = s->data();
            const int64_t n = static_cast<int64_t>(s->size());
            for (int64_t i = 0; i < n; ++i) {
                const S v = in[i];
                const S u = kSqrt2OverPi * (v + kCubic * v * v * v);
                const S th = std::tanh(u);
                const S sech2 = S(1) - th * th;
                const S du = kSqrt2OverPi * (S(1) + S(3) * kCubic * v * v);
                sink[i] += go[i] * (S(0.5) * (S(1) + th) + S(0.5) * v * sech2 * du);
            }
        });
    return t;
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = matmul_raw(a, b, false, false);
    if (GraphT<S>* g = tape_for<S>({&a, &b}))
        record(g, "matmul", out, [a, b, os = out.shape()](std::span<const S> go,
                                                          BackwardPassT<S>& p) {
            TensorT<S> gt(os, std::vector<S>(go.begin(), go.end()));
            if (p.sink(a)) {
                TensorT<S> da = matmul_raw(gt, b, false, true);
                reduce_accumulate(p, a, da.data(), da.shape());
            }
            if (p.sink(b)) {
                if (b.rank() == 2 && a.rank() > 2) {
                    const int64_t k = a.dim(-1);
                    TensorT<S> af = a.reshaped({a.numel() / k, k});
                    TensorT<S> gf = gt.reshaped({gt.numel() / gt.dim(-1), gt.dim(-1)});
                    TensorT<S> db = matmul_raw(af, gf, true, false);
                    p.accumulate(b, db.data());
                } else {
                    TensorT<S> db = matmul_raw(a, gt, true, false);
                    reduce_accumulate(p, b, db.data(), db.shape());
                }
            }
        });
    return out;
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& x, int64_t axis_a, int64_t axis_b) {
    const int64_t a = normalize_axis(axis_a, x.rank(), "transpose");
    const int64_t b = normalize_axis(axis_b, x.rank(), "transpose");
    Shape out_shape;
    std::vector<S> out = transpose_raw(x.data(), x.shape(), a, b, out_shape);
    TensorT<S> t(std::move(out_shape), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "transpose", t,
               [x, a, b, ts = t.shape()](std::span<const S> go, BackwardPassT<S>& p) {
                   if (!p.sink(x)) return;
                   Shape back_shape;
                   std::vector<S> gx = transpose_raw(go, ts, a, b, back_shape);
                   p.accumulate(x, gx);
               });
    return t;
}

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
    // contiguous layout: a reshape is a view sharing storage
    TensorT<S> t = x.detach().reshaped(std::move(shape));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "reshape", t,
               [x](std::span<const S> go, BackwardPassT<S>& p) { p.accumulate(x, go); });
    return t;
}

template <typename S>
TensorT<S> softmax(const TensorT<S>& x, int64_t axis) {
    const int64_t ax = normalize_axis(axis, x.rank(), "softmax");
    int64_t outer, len, inner;
    axis_extents(x, ax, outer, len, inner);
    std::vector<S> out(static_cast<size_t>(x.numel()));
    auto px = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            S mx = px[base];
            for (int64_t j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
            S sum = S(0);
            for (int64_t j = 0; j < len; ++j) {
                const S e = std::exp(px[base + j * inner] - mx);
                out[base + j * inner] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (int64_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
        }
    TensorT<S> y(x.shape(), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "softmax", y,
               [x, y, outer, len, inner](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(x);
                   if (!s) return;
                   auto py = y.data();
                   for (int64_t o = 0; o < outer; ++o)
                       for (int64_t in = 0; in < inner; ++in) {
                           const int64_t base = o * len * inner + in;
                           S dot = S(0);
                           for (int64_t j = 0; j < len; ++j)
                               dot += go[base + j * inner] * py[base + j * inner];
                           for (int64_t j = 0; j < len; ++j) {
                               const int64_t k = base + j * inner;
                               (*s)[k] += py[k] * (go[k] - dot);
                           }
                       }
               });
    return y;
}

template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps) {
    const int64_t width = x.dim(-1);
    if (gamma.numel() != width || beta.numel() != width)
        throw ShapeError("layer_norm: gamma/beta must have width " + std::to_string(width) +
                         ", got " + shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
    const int64_t rows = x.numel() / width;
    std::vector<S> out(static_cast<size_t>(x.numel()));
    auto mean = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto rstd = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto px = x.data();
    auto pg = gamma.data();
    auto pb = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* row = px.data() + r * width;
        S m = S(0);
        for (int64_t j = 0; j < width; ++j) m += row[j];
        m /= static_cast<S>(width);
        S var = S(0);
        for (int64_t j = 0; j < width; ++j) {
            const S d = row[j] - m;
            var += d * d;
        }
        var /= static_cast<S>(width);
        const S r_ = S(1) / std::sqrt(var + eps);
        (*mean)[static_cast<size_t>(r)] = m;
        (*rstd)[static_cast<size_t>(r)] = r_;
        for (int64_t j = 0; j < width; ++j)
            out[r * width + j] = (row[j] - m) * r_ * pg[j] + pb[j];
    }
    TensorT<S> y(x.shape(), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x, &gamma, &beta}))
        record(g, "layer_norm", y,
               [x, gamma, beta, mean, rstd, rows, width](std::span<const S> go,
                                                         BackwardPassT<S>& p) {
                   auto px = x.data();
                   auto pg = gamma.data();
                   auto* sx = p.sink(x);
                   auto* sg = p.sink(gamma);
                   auto* sb = p.sink(beta);
                   for (int64_t r = 0; r < rows; ++r) {
                       const S m = (*mean)[static_cast<size_t>(r)];
                       const S rs = (*rstd)[static_cast<size_t>(r)];
                       const S* row = px.data() + r * width;
                       const S* grow = go.data() + r * width;
                       if (sx) {
                           S mean_dyh = S(0), mean_dyh_xhat = S(0);
                           for (int64_t j = 0; j < width; ++j) {
                               const S xhat = (row[j] - m) * rs;
                               const S dyh = grow[j] * pg[j];
                               mean_dyh += dyh;
                               mean_dyh_xhat += dyh * xhat;
                           }
                           mean_dyh /= static_cast<S>(width);
                           mean_dyh_xhat /= static_cast<S>(width);
                           for (int64_t j = 0; j < width; ++j) {
                               const S xhat = (row[j] - m) * rs;
                               const S dyh = grow[j] * pg[j];
                               (*sx)[r * width + j] += rs * (dyh - mean_dyh - xhat * mean_dyh_xhat);
                           }
                       }
                       if (sg)
                           for (int64_t j = 0; j < width; ++j)
                               (*sg)[j] += grow[j] * (row[j] - m) * rs;
                       if (sb)
                           for (int64_t j = 0; j < width; ++j) (*sb)[j] += grow[j];
                   }
               });
    return y;
}

template <typename S>
TensorT<S> l2_normalize(const TensorT<S>& x, S eps) {
    const int64_t width = x.dim(-1);
    const int64_t rows = x.numel() / width;
    std::vector<S> out(static_cast<size_t>(x.numel()));
    auto rnorm = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        S ss = S(0);
        for (int64_t j = 0; j < width; ++j) {
            const S v = px[r * width + j];
            ss += v * v;
        }
        const S rn = S(1) / std::sqrt(ss + eps);
        (*rnorm)[static_cast<size_t>(r)] = rn;
        for (int64_t j = 0; j < width; ++j) out[r * width + j] = px[r * width + j] * rn;
    }
    TensorT<S> y(x.shape(), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "l2_normalize", y,
               [x, y, rnorm, rows, width](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(x);
                   if (!s) return;
                   auto py = y.data();
                   for (int64_t r = 0; r < rows; ++r) {
                       const S rn = (*rnorm)[static_cast<size_t>(r)];
                       S dot = S(0);
                       for (int64_t j = 0; j < width; ++j)
                           dot += go[r * width + j] * py[r * width + j];
                       for (int64_t j = 0; j < width; ++j)
                           (*s)[r * width + j] += rn * (go[r * width + j] - py[r * width + j] * dot);
                   }
               });
    return y;
}

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
    S total = S(0);
    for (S v : x.data()) total += v;
    TensorT<S> y = TensorT<S>::scalar(total);
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "sum", y, [x](std::span<const S> go, BackwardPassT<S>& p) {
            if (auto* s = p.sink(x))
                for (S& v : *s) v += go[0];
        });
    return y;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& x) {
    S total = S(0);
    for (S v : x.data()) total += v;
    const S inv = S(1) / static_cast<S>(x.numel());
    TensorT<S> y = TensorT<S>::scalar(total * inv);
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "mean", y, [x, inv](std::span<const S> go, BackwardPassT<S>& p) {
            if (auto* s = p.sink(x))
                for (S& v : *s) v += go[0] * inv;
        });
    return y;
}

template <typename S>
TensorT<S> sum_axis(const TensorT<S>& x, int64_t axis) {
    const int64_t ax = normalize_axis(axis, x.rank(), "sum_axis");
    int64_t outer, len, inner;
    axis_extents(x, ax, outer, len, inner);
    Shape out_shape;
    for (int64_t i = 0; i < x.rank(); ++i)
        if (i != ax) out_shape.push_back(x.dim(i));
    std::vector<S> out(static_cast<size_t>(outer * inner), S(0));
    auto px = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < len; ++j)
            for (int64_t in = 0; in < inner; ++in)
                out[o * inner + in] += px[(o * len + j) * inner + in];
    TensorT<S> y(std::move(out_shape), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "sum_axis", y,
               [x, outer, len, inner](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(x);
                   if (!s) return;
                   for (int64_t o = 0; o < outer; ++o)
                       for (int64_t j = 0; j < len; ++j)
                           for (int64_t in = 0; in < inner; ++in)
                               (*s)[(o * len + j) * inner + in] += go[o * inner + in];
               });
    return y;
}

template <typename S>
TensorT<S> mean_axis(const TensorT<S>& x, int64_t axis) {
    const int64_t ax = normalize_axis(axis, x.rank(), "mean_axis");
    const S inv = S(1) / static_cast<S>(x.dim(ax));
    return mul_scalar(sum_axis(x, axis), inv);
}

template <typename S>
TensorT<S> slice(const TensorT<S>& x, int64_t axis, int64_t start, int64_t length) {
    const int64_t ax = normalize_axis(axis, x.rank(), "slice");
    if (start < 0 || length < 0 || start + length > x.dim(ax))
        throw ShapeError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of extent " +
                         std::to_string(x.dim(ax)));
    int64_t outer, len, inner;
    axis_extents(x, ax, outer, len, inner);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(ax)] = length;
    std::vector<S> out(static_cast<size_t>(outer * length * inner));
    auto px = x.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * length * inner,
                    px.data() + (o * len + start) * inner,
                    static_cast<size_t>(length * inner) * sizeof(S));
    TensorT<S> y(std::move(out_shape), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "slice", y,
               [x, outer, len, inner, start, length](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(x);
                   if (!s) return;
                   for (int64_t o = 0; o < outer; ++o)
                       for (int64_t j = 0; j < length * inner; ++j)
                           (*s)[(o * len + start) * inner + j] += go[o * length * inner + j];
               });
    return y;
}

template <typename S>
TensorT<S> concat(const TensorT<S>& a, const TensorT<S>& b, int64_t axis) {
    if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
    const int64_t ax = normalize_axis(axis, a.rank(), "concat");
    for (int64_t i = 0; i < a.rank(); ++i)
        if (i != ax && a.dim(i) != b.dim(i))
            throw ShapeError("concat: " + shape_str(a.shape()) + " with " + shape_str(b.shape()) +
                             " along axis " + std::to_string(ax));
    int64_t outer, la, inner;
    axis_extents(a, ax, outer, la, inner);
    const int64_t lb = b.dim(ax);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(ax)] = la + lb;
    std::vector<S> out(static_cast<size_t>(outer * (la + lb) * inner));
    auto pa = a.data();
    auto pb = b.data();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (la + lb) * inner, pa.data() + o * la * inner,
                    static_cast<size_t>(la * inner) * sizeof(S));
        std::memcpy(out.data() + (o * (la + lb) + la) * inner, pb.data() + o * lb * inner,
                    static_cast<size_t>(lb * inner) * sizeof(S));
    }
    TensorT<S> y(std::move(out_shape), std::move(out));
    if (GraphT<S>* g = tape_for<S>({&a, &b}))
        record(g, "concat", y,
               [a, b, outer, la, lb, inner](std::span<const S> go, BackwardPassT<S>& p) {
                   if (auto* sa = p.sink(a))
                       for (int64_t o = 0; o < outer; ++o)
                           for (int64_t j = 0; j < la * inner; ++j)
                               (*sa)[o * la * inner + j] += go[o * (la + lb) * inner + j];
                   if (auto* sb = p.sink(b))
                       for (int64_t o = 0; o < outer; ++o)
                           for (int64_t j = 0; j < lb * inner; ++j)
                               (*sb)[o * lb * inner + j] += go[(o * (la + lb) + la) * inner + j];
               });
    return y;
}

template <typename S>
TensorT<S> gather_tokens(const TensorT<S>& x, const std::vector<std::vector<int64_t>>& indices) {
    if (x.rank() != 3) throw ShapeError("gather_tokens: expected [B, N, D], got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
    if (static_cast<int64_t>(indices.size()) != B)
        throw ShapeError("gather_tokens: " + std::to_string(indices.size()) +
                         " index lists for batch of " + std::to_string(B));
    check_equal_token_counts<S>(indices, "gather_tokens");
    const int64_t V = static_cast<int64_t>(indices[0].size());
    std::vector<S> out(static_cast<size_t>(B * V * D));
    auto px = x.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < V; ++j) {
            const int64_t idx = indices[static_cast<size_t>(b)][static_cast<size_t>(j)];
            if (idx < 0 || idx >= N)
                throw ValueError("gather_tokens: sample " + std::to_string(b) + " index " +
                                 std::to_string(idx) + " out of range [0, " + std::to_string(N) +
                                 ")");
            std::memcpy(out.data() + (b * V + j) * D, px.data() + (b * N + idx) * D,
                        static_cast<size_t>(D) * sizeof(S));
        }
    TensorT<S> y(Shape{B, V, D}, std::move(out));
    if (GraphT<S>* g = tape_for<S>({&x}))
        record(g, "gather_tokens", y,
               [x, indices, B, V, D](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(x);
                   if (!s) return;
                   for (int64_t b = 0; b < B; ++b)
                       for (int64_t j = 0; j < V; ++j) {
                           const int64_t idx = indices[static_cast<size_t>(b)][static_cast<size_t>(j)];
                           for (int64_t d = 0; d < D; ++d)
                               (*s)[(b * x.dim(1) + idx) * D + d] += go[(b * V + j) * D + d];
                       }
               });
    return y;
}

template <typename S>
TensorT<S> embed_rows(const TensorT<S>& table, const std::vector<std::vector<int64_t>>& indices) {
    if (table.rank() != 2)
        throw ShapeError("embed_rows: expected [N, D] table, got " + shape_str(table.shape()));
    const int64_t N = table.dim(0), D = table.dim(1);
    const int64_t B = static_cast<int64_t>(indices.size());
    check_equal_token_counts<S>(indices, "embed_rows");
    const int64_t V = B > 0 ? static_cast<int64_t>(indices[0].size()) : 0;
    std::vector<S> out(static_cast<size_t>(B * V * D));
    auto pt = table.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < V; ++j) {
            const int64_t idx = indices[static_cast<size_t>(b)][static_cast<size_t>(j)];
            if (idx < 0 || idx >= N)
                throw ValueError("embed_rows: sample " + std::to_string(b) + " index " +
                                 std::to_string(idx) + " out of range [0, " + std::to_string(N) +
                                 ")");
            std::memcpy(out.data() + (b * V + j) * D, pt.data() + idx * D,
                        static_cast<size_t>(D) * sizeof(S));
        }
    TensorT<S> y(Shape{B, V, D}, std::move(out));
    if (GraphT<S>* g = tape_for<S>({&table}))
        record(g, "embed_rows", y,
               [table, indices, B, V, D](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(table);
                   if (!s) return;
                   for (int64_t b = 0; b < B; ++b)
                       for (int64_t j = 0; j < V; ++j) {
                           const int64_t idx = indices[static_cast<size_t>(b)][static_cast<size_t>(j)];
                           for (int64_t d = 0; d < D; ++d)
                               (*s)[idx * D + d] += go[(b * V + j) * D + d];
                       }
               });
    return y;
}

template <typename S>
TensorT<S> scatter_tokens(const TensorT<S>& visible, const TensorT<S>& fill,
                          const std::vector<std::vector<int64_t>>& indices, int64_t token_count) {
    if (visible.rank() != 3)
        throw ShapeError("scatter_tokens: expected [B, V, D], got " + shape_str(visible.shape()));
    const int64_t B = visible.dim(0), V = visible.dim(1), D = visible.dim(2);
    if (fill.numel() != D)
        throw ShapeError("scatter_tokens: fill must have width " + std::to_string(D));
    if (static_cast<int64_t>(indices.size()) != B)
        throw ShapeError("scatter_tokens: index list count != batch");
    std::vector<S> out(static_cast<size_t>(B * token_count * D));
    auto pv = visible.data();
    auto pf = fill.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < token_count; ++t)
            std::memcpy(out.data() + (b * token_count + t) * D, pf.data(),
                        static_cast<size_t>(D) * sizeof(S));
        for (int64_t j = 0; j < V; ++j) {
            const int64_t idx = indices[static_cast<size_t>(b)][static_cast<size_t>(j)];
            if (idx < 0 || idx >= token_count)
                throw ValueError("scatter_tokens: sample " + std::to_string(b) + " index " +
                                 std::to_string(idx) + " out of range [0, " +
                                 std::to_string(token_count) + ")");
            std::memcpy(out.data() + (b * token_count + idx) * D, pv.data() + (b * V + j) * D,
                        static_cast<size_t>(D) * sizeof(S));
        }
    }
    TensorT<S> y(Shape{B, token_count, D}, std::move(out));
    if (GraphT<S>* g = tape_for<S>({&visible, &fill}))
        record(g, "scatter_tokens", y,
               [visible, fill, indices, B, V, D, token_count](std::span<const S> go,
                                                              BackwardPassT<S>& p) {
                   std::vector<char> is_visible(static_cast<size_t>(token_count));
                   auto* sv = p.sink(visible);
                   auto* sf = p.sink(fill);
                   for (int64_t b = 0; b < B; ++b) {
                       std::fill(is_visible.begin(), is_visible.end(), 0);
                       for (int64_t j = 0; j < V; ++j) {
                           const int64_t idx = indices[static_cast<size_t>(b)][static_cast<size_t>(j)];
                           is_visible[static_cast<size_t>(idx)] = 1;
                           if (sv)
                               for (int64_t d = 0; d < D; ++d)
                                   (*sv)[(b * V + j) * D + d] += go[(b * token_count + idx) * D + d];
                       }
                       if (sf)
                           for (int64_t t = 0; t < token_count; ++t)
                               if (!is_visible[static_cast<size_t>(t)])
                                   for (int64_t d = 0; d < D; ++d)
                                       (*sf)[d] += go[(b * token_count + t) * D + d];
                   }
               });
    return y;
}

template <typename S>
TensorT<S> broadcast_token(const TensorT<S>& token, int64_t batch) {
    const int64_t D = token.numel();
    std::vector<S> out(static_cast<size_t>(batch * D));
    for (int64_t b = 0; b < batch; ++b)
        std::memcpy(out.data() + b * D, token.data().data(), static_cast<size_t>(D) * sizeof(S));
    TensorT<S> y(Shape{batch, 1, D}, std::move(out));
    if (GraphT<S>* g = tape_for<S>({&token}))
        record(g, "broadcast_token", y,
               [token, batch, D](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(token);
                   if (!s) return;
                   for (int64_t b = 0; b < batch; ++b)
                       for (int64_t d = 0; d < D; ++d) (*s)[d] += go[b * D + d];
               });
    return y;
}

template <typename S>
TensorT<S> smooth_l1(const TensorT<S>& pred, const TensorT<S>& target, S beta) {
    if (pred.shape() != target.shape())
        throw ShapeError("smooth_l1: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    if (!(beta > S(0))) throw ValueError("smooth_l1: beta must be > 0");
    auto pp = pred.data();
    auto pt = target.data();
    S total = S(0);
    for (size_t i = 0; i < pp.size(); ++i) {
        const S d = pp[i] - pt[i];
        const S ad = std::abs(d);
        total += ad < beta ? S(0.5) * d * d / beta : ad - S(0.5) * beta;
    }
    const S inv = S(1) / static_cast<S>(pred.numel());
    TensorT<S> y = TensorT<S>::scalar(total * inv);
    if (GraphT<S>* g = tape_for<S>({&pred}))
        record(g, "smooth_l1", y,
               [pred, target, beta, inv](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(pred);
                   if (!s) return;
                   auto pp = pred.data();
                   auto pt = target.data();
                   for (size_t i = 0; i < s->size(); ++i) {
                       const S d = pp[i] - pt[i];
                       const S slope = std::abs(d) < beta ? d / beta : (d > S(0) ? S(1) : S(-1));
                       (*s)[i] += go[0] * inv * slope;
                   }
               });
    return y;
}

template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int64_t>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy: expected [B, C] logits, got " + shape_str(logits.shape()));
    const int64_t B = logits.dim(0), C = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    auto pl = logits.data();
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(B * C));
    S total = S(0);
    for (int64_t b = 0; b < B; ++b) {
        const int64_t y = labels[static_cast<size_t>(b)];
        if (y < 0 || y >= C)
            throw ValueError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(C) + ")");
        const S* row = pl.data() + b * C;
        S mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        S sum = S(0);
        for (int64_t c = 0; c < C; ++c) {
            const S e = std::exp(row[c] - mx);
            (*probs)[b * C + c] = e;
            sum += e;
        }
        const S inv = S(1) / sum;
        for (int64_t c = 0; c < C; ++c) (*probs)[b * C + c] *= inv;
        total += std::log(sum) + mx - row[y];
    }
    TensorT<S> loss = TensorT<S>::scalar(total / static_cast<S>(B));
    if (GraphT<S>* g = tape_for<S>({&logits}))
        record(g, "cross_entropy", loss,
               [logits, labels, probs, B, C](std::span<const S> go, BackwardPassT<S>& p) {
                   auto* s = p.sink(logits);
                   if (!s) return;
                   const S scale = go[0] / static_cast<S>(B);
                   for (int64_t b = 0; b < B; ++b)
                       for (int64_t c = 0; c < C; ++c) {
                           const S onehot = labels[static_cast<size_t>(b)] == c ? S(1) : S(0);
                           (*s)[b * C + c] += scale * ((*probs)[b * C + c] - onehot);
                       }
               });
    return loss;
}

#define MOMA_INSTANTIATE_OPS(S)                                                                    \
    template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);                             \
    template TensorT<S> sub<S>(const TensorT<S>&, const TensorT<S>&);                             \
    template TensorT<S> mul<S>(const TensorT<S>&, const TensorT<S>&);                             \
    template TensorT<S> add_scalar<S>(const TensorT<S>&, S);                                      \
    template TensorT<S> mul_scalar<S>(const TensorT<S>&, S);                                      \
    template TensorT<S> gelu<S>(const TensorT<S>&);                                               \
    template TensorT<S> matmul<S>(const TensorT<S>&, const TensorT<S>&);                          \
    template TensorT<S> transpose<S>(const TensorT<S>&, int64_t, int64_t);                        \
    template TensorT<S> reshape<S>(const TensorT<S>&, Shape);                                     \
    template TensorT<S> softmax<S>(const TensorT<S>&, int64_t);                                   \
    template TensorT<S> layer_norm<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,   \
                                      S);                                                         \
    template TensorT<S> l2_normalize<S>(const TensorT<S>&, S);                                    \
    template TensorT<S> sum<S>(const TensorT<S>&);                                                \
    template TensorT<S> mean<S>(const TensorT<S>&);                                               \
    template TensorT<S> sum_axis<S>(const TensorT<S>&, int64_t);                                  \
    template TensorT<S> mean_axis<S>(const TensorT<S>&, int64_t);                                 \
    template TensorT<S> slice<S>(const TensorT<S>&, int64_t, int64_t, int64_t);                   \
    template TensorT<S> concat<S>(const TensorT<S>&, const TensorT<S>&, int64_t);                 \
    template TensorT<S> gather_tokens<S>(const TensorT<S>&,                                       \
                                         const std::vector<std::vector<int64_t>>&);               \
    template TensorT<S> embed_rows<S>(const TensorT<S>&,                                          \
                                      const std::vector<std::vector<int64_t>>&);                  \
    template TensorT<S> scatter_tokens<S>(const TensorT<S>&, const TensorT<S>&,                   \
                                          const std::vector<std::vector<int64_t>>&, int64_t);     \
    template TensorT<S> broadcast_token<S>(const TensorT<S>&, int64_t);                           \
    template TensorT<S> smooth_l1<S>(const TensorT<S>&, const TensorT<S>&, S);                    \
    template TensorT<S> cross_entropy<S>(const TensorT<S>&, const std::vector<int64_t>&);

MOMA_INSTANTIATE_OPS(float)
MOMA_INSTANTIATE_OPS(double)

}  // namespace moma::ops
