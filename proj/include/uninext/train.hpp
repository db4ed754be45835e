#pragma once

// Toy-scale supervised training: AdamW with decoupled weight decay, a
// warmup+cosine learning-rate schedule, a synthetic oriented-grating dataset
// whose labels are recoverable by construction, and a deterministic training
// loop over a Model.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "model.hpp"

namespace uninext {

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup to base_lr, then cosine decay to 0.
// ---------------------------------------------------------------------------
inline double lr_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps,
                          double base_lr) {
    if (total_steps < 1 || warmup_steps < 0 || warmup_steps >= total_steps)
        throw UsageError("lr_schedule: need 0 <= warmup_steps < total_steps");
    if (step < 0) step = 0;
    if (step > total_steps) step = total_steps;
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(progress * 3.14159265358979323846));
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------
template <typename T>
struct OptimState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    bool decay_all = false;  // true: decay LN affine and biases too
    int64_t step = 0;
    std::vector<Tensor<T>> m;  // first moments, sized on first use
    std::vector<Tensor<T>> v;  // second moments
};

// One decoupled-decay Adam step over all parameters: p <- p*(1 - lr_t*wd),
// then the bias-corrected moment update. Parameters whose decay flag is off
// (LN affine, biases) skip the decay term unless state.decay_all is set.
template <typename T>
void adamw_step(std::vector<Param<T>>& params, const std::vector<Tensor<T>>& grads,
                OptimState<T>& state, double lr_t) {
    if (grads.size() != params.size())
        throw UsageError("adamw_step: " + std::to_string(grads.size()) + " grads for " +
                         std::to_string(params.size()) + " params");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor<T>::zeros(p.value.dims()));
            state.v.push_back(Tensor<T>::zeros(p.value.dims()));
        }
    }
    if (state.m.size() != params.size())
        throw UsageError("adamw_step: optimizer state tracks a different parameter set");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (size_t i = 0; i < params.size(); ++i) {
        Param<T>& p = params[i];
        const Tensor<T>& g = grads[i];
        if (g.dims() != p.value.dims())
            throw ShapeError("adamw_step: grad dims " + dims_str(g.dims()) + " for param " +
                             p.name + " " + dims_str(p.value.dims()));
        const int64_t n = g.numel();
        const T* gd = g.data();
        for (int64_t j = 0; j < n; ++j) {
            if (!std::isfinite(static_cast<double>(gd[j])))
                throw NumericError("adamw_step: non-finite gradient for " + p.name);
        }

        T* pd = p.value.data();
        T* md = state.m[i].data();
        T* vd = state.v[i].data();
        const bool decay = (p.decay || state.decay_all) && state.weight_decay > 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double pj = static_cast<double>(pd[j]);
            const double gj = static_cast<double>(gd[j]);
            if (decay) pj *= 1.0 - lr_t * state.weight_decay;
            const double mj = state.beta1 * md[j] + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * vd[j] + (1.0 - state.beta2) * gj * gj;
            md[j] = static_cast<T>(mj);
            vd[j] = static_cast<T>(vj);
            pj -= lr_t * (mj / bc1) / (std::sqrt(vj / bc2) + state.eps);
            pd[j] = static_cast<T>(pj);
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic dataset: class k = oriented grating at angle pi*k/K with a
// per-class color bias, plus bounded noise. Labels are recoverable from the
// images by sin/cos demodulation of the grating angle.
// ---------------------------------------------------------------------------
template <typename T>
struct SynthDataset {
    Tensor<T> images;             // (N, 3, S, S), values in [0, 1]
    std::vector<int32_t> labels;  // in [0, K)
    int64_t num_classes = 0;
    uint64_t seed = 0;
    double cycles = 3.0;  // grating cycles across the image width

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    int64_t image_size() const { return images.dim(2); }
    double angle(int32_t cls) const {
        return 3.14159265358979323846 * static_cast<double>(cls) /
               static_cast<double>(num_classes);
    }
};

template <typename T>
SynthDataset<T> make_synth_dataset(int64_t n, int64_t size_px, int64_t num_classes,
                                   uint64_t seed, double noise = 0.1) {
    if (n < 1 || size_px < 4 || num_classes < 2)
        throw UsageError("make_synth_dataset: need n >= 1, size >= 4, classes >= 2");
    if (noise < 0.0 || noise > 0.1)
        throw UsageError("make_synth_dataset: noise must be in [0, 0.1]");

    SynthDataset<T> ds;
    ds.images = Tensor<T>({n, 3, size_px, size_px});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = num_classes;
    ds.seed = seed;

    Rng rng(seed);
    const double freq = 2.0 * 3.14159265358979323846 * ds.cycles / static_cast<double>(size_px);
    T* out = ds.images.data();
    for (int64_t i = 0; i < n; ++i) {
        const int32_t k = static_cast<int32_t>(i % num_classes);
        ds.labels[static_cast<size_t>(i)] = k;
        Rng img_rng = rng.split(static_cast<uint64_t>(i) + 1);
        const double phase = img_rng.next_uniform() * 2.0 * 3.14159265358979323846;
        const double th = ds.angle(k);
        const double cx = std::cos(th), sy = std::sin(th);
        for (int64_t c = 0; c < 3; ++c) {
            // The class biases one color channel with a stronger grating.
            const double amp = (c == k % 3) ? 0.35 : 0.15;
            for (int64_t y = 0; y < size_px; ++y) {
                for (int64_t x = 0; x < size_px; ++x) {
                    const double u = freq * (static_cast<double>(x) * cx +
                                             static_cast<double>(y) * sy);
                    double val = 0.5 + amp * std::sin(u + phase);
                    if (noise > 0.0) val += img_rng.next_uniform(-noise, noise);
                    val = std::min(1.0, std::max(0.0, val));
                    *out++ = static_cast<T>(val);
                }
            }
        }
    }
    return ds;
}

// Phase-invariant grating detector: demodulate the channel-mean image
// against each class angle and return the angle with the most energy. Used
// to prove labels are recoverable without any learned model.
template <typename T>
int32_t demodulate_class(const SynthDataset<T>& ds, int64_t index) {
    const int64_t S = ds.image_size();
    const double freq = 2.0 * 3.14159265358979323846 * ds.cycles / static_cast<double>(S);
    const T* img = ds.images.data() + index * 3 * S * S;
    std::vector<double> mean(static_cast<size_t>(S * S), 0.0);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t j = 0; j < S * S; ++j)
            mean[static_cast<size_t>(j)] += static_cast<double>(img[c * S * S + j]) / 3.0;

    int32_t best = 0;
    double best_energy = -1.0;
    for (int32_t k = 0; k < ds.num_classes; ++k) {
        const double th = ds.angle(k);
        const double cx = std::cos(th), sy = std::sin(th);
        double es = 0.0, ec = 0.0;
        for (int64_t y = 0; y < S; ++y) {
            for (int64_t x = 0; x < S; ++x) {
                const double u =
                    freq * (static_cast<double>(x) * cx + static_cast<double>(y) * sy);
                const double v = mean[static_cast<size_t>(y * S + x)] - 0.5;
                es += v * std::sin(u);
                ec += v * std::cos(u);
            }
        }
        const double e = es * es + ec * ec;
        if (e > best_energy) {
            best_energy = e;
            best = k;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------
struct TrainConfig {
    int64_t steps = 300;
    int64_t batch_size = 8;
    double base_lr = 1e-3;
    int64_t warmup_steps = 10;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool decay_all = false;  // apply weight decay to LN affine and biases too
    uint64_t seed = 0;       // drop-path randomness (when the model enables it)
};

struct TrainPoint {
    int64_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
};

// Runs forward/backward/AdamW over sequential wrap-around batches, updating
// the model parameters in place. Metrics are appended per step and optionally
// streamed as "step,loss,accuracy,lr" CSV lines. Deterministic given the
// model, dataset, and config.
template <typename T>
std::vector<TrainPoint> train_loop(Model<T>& m, const SynthDataset<T>& ds,
                                   const TrainConfig& tc, std::ostream* log = nullptr) {
    if (tc.steps < 1 || tc.batch_size < 1)
        throw UsageError("train_loop: steps and batch_size must be positive");
    if (ds.size() < 1) throw UsageError("train_loop: empty dataset");
    if (ds.num_classes != m.config.num_classes)
        throw UsageError("train_loop: dataset has " + std::to_string(ds.num_classes) +
                         " classes but the model head has " +
                         std::to_string(m.config.num_classes));

    OptimState<T> st;
    st.beta1 = tc.beta1;
    st.beta2 = tc.beta2;
    st.eps = tc.eps;
    st.weight_decay = tc.weight_decay;
    st.decay_all = tc.decay_all;

    Rng droppath(tc.seed, 0x0d501f);
    const int64_t S = ds.image_size();
    const int64_t n = ds.size();
    std::vector<TrainPoint> history;
    history.reserve(static_cast<size_t>(tc.steps));

    for (int64_t step = 0; step < tc.steps; ++step) {
        Tensor<T> xb({tc.batch_size, 3, S, S});
        std::vector<int32_t> yb(static_cast<size_t>(tc.batch_size));
        for (int64_t j = 0; j < tc.batch_size; ++j) {
            const int64_t idx = (step * tc.batch_size + j) % n;
            std::copy_n(ds.images.data() + idx * 3 * S * S, 3 * S * S,
                        xb.data() + j * 3 * S * S);
            yb[static_cast<size_t>(j)] = ds.labels[static_cast<size_t>(idx)];
        }

        const double lr_t = lr_schedule(step, tc.steps, tc.warmup_steps, tc.base_lr);
        TrainPoint pt;
        pt.step = step;
        pt.lr = lr_t;
        try {
            Tape<T> tape;
            std::vector<Var<T>> bound = m.bind(tape);
            ForwardOptions opt;
            opt.training = true;
            opt.droppath = m.config.drop_path_rate > 0.0 ? &droppath : nullptr;
            ForwardResult<T> r = model_forward_bound(m, tape.leaf(xb), bound, opt);
            Var<T> loss = cross_entropy(r.logits, yb);
            pt.loss = static_cast<double>(loss.val()[0]);
            if (!std::isfinite(pt.loss))
                throw NumericError("train_loop: non-finite loss");

            const Tensor<T> logits = r.logits.val();
            int64_t correct = 0;
            const int64_t K = logits.dim(1);
            for (int64_t b = 0; b < tc.batch_size; ++b) {
                const T* row = logits.data() + b * K;
                int64_t am = 0;
                for (int64_t k = 1; k < K; ++k)
                    if (row[k] > row[am]) am = k;
                correct += am == yb[static_cast<size_t>(b)];
            }
            pt.accuracy = static_cast<double>(correct) / static_cast<double>(tc.batch_size);

            tape.backward(loss);
            std::vector<Tensor<T>> grads;
            grads.reserve(bound.size());
            for (const Var<T>& leaf : bound) grads.push_back(tape.grad(leaf));
            adamw_step(m.params, grads, st, lr_t);
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(step) + ": " + e.what());
        }

        if (log != nullptr)
            *log << pt.step << ',' << pt.loss << ',' << pt.accuracy << ',' << pt.lr << '\n';
        history.push_back(pt);
    }
    return history;
}

}  // namespace uninext
