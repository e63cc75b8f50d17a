#pragma once
// Central-difference gradient checker. Runs at double precision: build the
// graph once for analytic gradients, then re-run the forward pass with each
// parameter coordinate nudged by +/- h.

#include <string>
#include <vector>

#include "globalmind/graph.hpp"

namespace globalmind {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
};

// build: callable Graph<double>& -> Var<double>, returning the scalar loss.
// Must be deterministic and must stage every parameter in `params`.
template <class Build>
GradCheckReport grad_check(Build&& build, const std::vector<Parameter<double>*>& params,
                           double h = 1e-5) {
    auto eval = [&](const char* when, const std::string& who) -> double {
        Graph<double> g;
        Var<double> loss = build(g);
        if (loss.val().numel() != 1)
            throw UsageError("grad_check: objective must be scalar");
        const double f = loss.val()[0];
        if (!std::isfinite(f))
            throw NumericError("grad_check: non-finite objective at " + std::string(when) + " " + who);
        return f;
    };

    for (auto* p : params) p->zero_grad();
    std::vector<Tensor<double>> analytic;
    {
        Graph<double> g;
        Var<double> loss = build(g);
        if (loss.val().numel() != 1)
            throw UsageError("grad_check: objective must be scalar");
        g.backward(loss);
        for (auto* p : params) analytic.push_back(p->grad);
    }

    GradCheckReport rep;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<double>& p = *params[pi];
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const double v0 = p.value[i];
            const std::string who = p.name + "[" + std::to_string(i) + "]";
            p.value[i] = v0 + h;
            const double fp = eval("+h of", who);
            p.value[i] = v0 - h;
            const double fm = eval("-h of", who);
            p.value[i] = v0;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
                rep.worst_index = i;
            }
        }
    }
    return rep;
}

}  // namespace globalmind
