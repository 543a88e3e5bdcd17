#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dite/autograd.hpp"

namespace dite {

// Central-difference verification of the analytic gradients. The forward
// builder is re-run for every perturbed parameter element, so this is meant
// for problems of at most a few thousand elements.

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor = nullptr;
};

struct FiniteDiffEntry {
    std::string name;
    double max_rel_err = 0;
    double max_abs_err = 0;
    bool finite = true;
};

struct FiniteDiffReport {
    std::vector<FiniteDiffEntry> entries;
    double worst_rel = 0;
    double step = 0, tol = 0;
    bool all_finite = true;

    bool pass() const { return all_finite && worst_rel < tol; }
};

// err = |analytic - numeric| / max(1, |analytic|, |numeric|): relative for
// O(1)+ gradients, absolute below that.
inline double grad_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

// forward: builds the graph on a fresh tape and returns the output node (any
// shape; it is reduced to a scalar by summation). Parameters perturbed for
// the numeric side must be registered on the tape under exactly the names
// given in `params`.
template <class T>
FiniteDiffReport finite_diff_check(const std::function<int(Tape<T>&)>& forward,
                                   const std::vector<ParamRef<T>>& params, double step, double tol) {
    if (step <= 0) throw TensorError("finite_diff_check: step must be positive");
    FiniteDiffReport report;
    report.step = step;
    report.tol = tol;

    // analytic gradients
    std::map<std::string, Tensor<T>> analytic;
    {
        Tape<T> tp;
        int out = forward(tp);
        int s = tp.sum_all(out);
        tp.backward(s);
        for (const ParamRef<T>& p : params) {
            const int node = tp.param_node(p.name);
            if (node < 0) {
                throw TensorError("finite_diff_check: parameter '" + p.name +
                                  "' was not registered by the forward function");
            }
            if (tp.value(node).shape != p.tensor->shape) {
                throw TensorError("finite_diff_check: parameter '" + p.name + "' shape mismatch");
            }
            analytic.emplace(p.name, tp.grad_or_zero(node));
        }
    }

    const auto eval = [&]() -> double {
        Tape<T> tp;
        int out = forward(tp);
        return static_cast<double>(sum_all(tp.value(out)));
    };

    for (const ParamRef<T>& p : params) {
        FiniteDiffEntry entry;
        entry.name = p.name;
        const Tensor<T>& g = analytic.at(p.name);
        for (std::size_t i = 0; i < p.tensor->data.size(); ++i) {
            const T saved = p.tensor->data[i];
            p.tensor->data[i] = saved + static_cast<T>(step);
            const double f_plus = eval();
            p.tensor->data[i] = saved - static_cast<T>(step);
            const double f_minus = eval();
            p.tensor->data[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double a = static_cast<double>(g.data[i]);
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                entry.finite = false;
                report.all_finite = false;
                continue;
            }
            entry.max_rel_err = std::max(entry.max_rel_err, grad_error(a, numeric));
            entry.max_abs_err = std::max(entry.max_abs_err, std::fabs(a - numeric));
        }
        report.worst_rel = std::max(report.worst_rel, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// Convenience: collect (prefix-joined) refs from a module visitor, parameters
// only.
template <class T, class Module>
std::vector<ParamRef<T>> collect_param_refs(Module& m, const std::string& prefix) {
    std::vector<ParamRef<T>> refs;
    m.visit(prefix, [&](const std::string& name, Tensor<T>& t, bool is_param) {
        if (is_param) refs.push_back(ParamRef<T>{name, &t});
    });
    return refs;
}

}  // namespace dite
