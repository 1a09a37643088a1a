#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>

#include "ntklab/netcore.hpp"
#include "ntklab/types.hpp"

namespace test {

inline ntk::Vector vec(std::initializer_list<double> v) {
    ntk::Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

inline ntk::Vector gaussian(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    ntk::Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

// max_k |g_k - fd_k| / max(max|g|, tiny): errors are measured against the
// gradient's scale so near-zero entries do not dominate.
inline double jacobian_fd_error(const ntk::NetworkSpec& spec, const ntk::ParamVector& p, const ntk::Vector& x,
                                double h = 1e-5) {
    const ntk::Vector g = ntk::param_jacobian(spec, p, x);
    ntk::ParamVector q = p;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < g.size(); ++k) {
        const double keep = q.values()[k];
        q.values()[k] = keep + h;
        const double up = ntk::forward(spec, q, x);
        q.values()[k] = keep - h;
        const double down = ntk::forward(spec, q, x);
        q.values()[k] = keep;
        worst = std::max(worst, std::abs(g[k] - (up - down) / (2 * h)));
    }
    return worst / std::max(g.cwiseAbs().maxCoeff(), 1e-12);
}

inline double mixed_fd_error(const ntk::NetworkSpec& spec, const ntk::ParamVector& p, const ntk::Vector& x,
                             double h = 1e-5) {
    const ntk::Matrix m = ntk::mixed_jacobian(spec, p, x);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        ntk::Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const ntk::Vector fd = (ntk::param_jacobian(spec, p, xp) - ntk::param_jacobian(spec, p, xm)) / (2 * h);
        worst = std::max(worst, (m.col(j) - fd).cwiseAbs().maxCoeff());
    }
    return worst / std::max(m.cwiseAbs().maxCoeff(), 1e-12);
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("ntklab-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace test
