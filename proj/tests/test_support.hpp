#pragma once

#include "ordiformer/random.hpp"
#include "ordiformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace ordiformer::testing {

using InputFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
using ParamFn = std::function<Tensor(Tape&)>;

inline double projected(const Matrix& out, const Matrix& proj) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < out.size(); ++i) acc += double(out.data()[i]) * double(proj.data()[i]);
    return acc;
}

/// || analytic - numeric || / max(|| analytic ||, || numeric ||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-6) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

/// Central differences of <f(x), R> with R a fixed random projection.
/// Returns the worst relative error over the inputs.
inline double gradient_check(const InputFn& f, std::vector<Matrix> inputs, Rng& rng, double step = 1e-3) {
    Matrix proj;
    std::vector<std::vector<double>> analytic(inputs.size());
    {
        Tape tape;
        std::vector<Tensor> vars;
        for (const auto& m : inputs) vars.push_back(tape.variable(m));
        Tensor out = f(tape, vars);
        proj = normal_matrix(out.rows(), out.cols(), 1.0f, rng);
        tape.backward(sum(mul(out, tape.constant(proj))));
        for (std::size_t j = 0; j < vars.size(); ++j) {
            const Matrix& g = vars[j].grad();
            analytic[j].assign(g.data(), g.data() + g.size());
        }
    }
    auto eval = [&](const std::vector<Matrix>& xs) {
        Tape tape;
        std::vector<Tensor> vars;
        for (const auto& m : xs) vars.push_back(tape.variable(m));
        return projected(f(tape, vars).value(), proj);
    };
    double worst = 0.0;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        std::vector<double> numeric(static_cast<std::size_t>(inputs[j].size()));
        for (Eigen::Index i = 0; i < inputs[j].size(); ++i) {
            const float x0 = inputs[j].data()[i];
            const float xp = x0 + static_cast<float>(step);
            const float xm = x0 - static_cast<float>(step);
            inputs[j].data()[i] = xp;
            const double lp = eval(inputs);
            inputs[j].data()[i] = xm;
            const double lm = eval(inputs);
            inputs[j].data()[i] = x0;
            numeric[static_cast<std::size_t>(i)] = (lp - lm) / (double(xp) - double(xm));
        }
        worst = std::max(worst, relative_error(analytic[j], numeric));
    }
    return worst;
}

/// Same check over parameter values; `f` must register them on the tape.
inline double gradient_check_params(const ParamFn& f, const std::vector<Parameter*>& params, Rng& rng,
                                    double step = 1e-3) {
    Matrix proj;
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor out = f(tape);
        proj = normal_matrix(out.rows(), out.cols(), 1.0f, rng);
        tape.backward(sum(mul(out, tape.constant(proj))));
        for (Parameter* p : params) analytic.insert(analytic.end(), p->grad.data(), p->grad.data() + p->grad.size());
    }
    auto eval = [&] {
        Tape tape;
        return projected(f(tape).value(), proj);
    };
    std::vector<double> numeric;
    for (Parameter* p : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const float x0 = p->value.data()[i];
            const float xp = x0 + static_cast<float>(step);
            const float xm = x0 - static_cast<float>(step);
            p->value.data()[i] = xp;
            const double lp = eval();
            p->value.data()[i] = xm;
            const double lm = eval();
            p->value.data()[i] = x0;
            numeric.push_back((lp - lm) / (double(xp) - double(xm)));
        }
    }
    return relative_error(analytic, numeric);
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, float lo, float hi, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
    return m;
}

/// Magnitudes in [lo, hi] with random sign; keeps kinked ops away from 0.
inline Matrix signed_away_from_zero(Eigen::Index rows, Eigen::Index cols, float lo, float hi, Rng& rng) {
    Matrix m = uniform_matrix(rows, cols, lo, hi, rng);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        if (uniform(rng, 0.0f, 1.0f) < 0.5f) m.data()[i] = -m.data()[i];
    return m;
}

inline Matrix row(std::initializer_list<float> v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (float x : v) m(0, i++) = x;
    return m;
}

constexpr int kSeeds = 20;
constexpr double kGradTol = 1e-3;

}  // namespace ordiformer::testing
