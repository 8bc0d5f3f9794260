#include "fad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fad::nn {
namespace {

double finite_or_throw(double v) {
    require(std::isfinite(v), "grad_check: non-finite intermediate value");
    return v;
}

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

} // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, double h) {
    Tensor<double> analytic;
    {
        Graph<double> g;
        Var<double> xv = g.input(x);
        Var<double> y = f(g, xv);
        require(y.value().size() == 1, "grad_check: f must return a scalar");
        finite_or_throw(y.value()[0]);
        g.backward(y);
        analytic = xv.grad();
    }
    auto eval = [&](const Tensor<double>& at) {
        Graph<double> g(GradMode::disabled);
        return finite_or_throw(f(g, g.constant(at)).value()[0]);
    };
    double worst = 0.0;
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        finite_or_throw(analytic[i]);
        probe[i] = x[i] + h;
        const double up = eval(probe);
        probe[i] = x[i] - h;
        const double down = eval(probe);
        probe[i] = x[i];
        worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

double grad_check_params(const ParamScalarFn& f,
                         const std::vector<Parameter<double>*>& params, double h,
                         std::size_t max_coords) {
    for (auto* p : params) {
        p->zero_grad();
    }
    {
        Graph<double> g;
        Var<double> y = f(g);
        require(y.value().size() == 1, "grad_check: f must return a scalar");
        finite_or_throw(y.value()[0]);
        g.backward(y);
    }
    auto eval = [&] {
        Graph<double> g(GradMode::disabled);
        return finite_or_throw(f(g).value()[0]);
    };
    double worst = 0.0;
    for (auto* p : params) {
        const std::size_t n = p->value.size();
        const std::size_t step =
            (max_coords == 0 || n <= max_coords) ? 1 : (n + max_coords - 1) / max_coords;
        for (std::size_t i = 0; i < n; i += step) {
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = eval();
            p->value[i] = orig - h;
            const double down = eval();
            p->value[i] = orig;
            worst = std::max(worst, rel_error(finite_or_throw(p->grad[i]),
                                              (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

} // namespace fad::nn
