#include "ntklab/netcore.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"

namespace ntk {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

Activation activation_from_string(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(name) + "' (expected relu, gelu or tanh)");
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

}  // namespace

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::gelu: return z * normal_cdf(z);
        case Activation::tanh: return std::tanh(z);
    }
    return 0.0;
}

double activate_d1(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::gelu: return normal_cdf(z) + z * normal_pdf(z);
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
    }
    return 0.0;
}

double activate_d2(Activation a, double z) {
    switch (a) {
        case Activation::relu: return 0.0;
        case Activation::gelu: return normal_pdf(z) * (2.0 - z * z);
        case Activation::tanh: {
            const double t = std::tanh(z);
            return -2.0 * t * (1.0 - t * t);
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// NetworkSpec

void NetworkSpec::validate() const {
    if (input_dim == 0) throw ConfigError("network: input_dim must be positive");
    for (auto w : hidden_widths)
        if (w == 0) throw ConfigError("network: hidden widths must be positive");
    if (!input_scale.empty() && input_scale.size() != input_dim)
        throw ConfigError("network: input_scale length must equal input_dim");
    for (double s : input_scale)
        if (!std::isfinite(s)) throw ConfigError("network: input_scale entries must be finite");
}

std::vector<LayerSlot> layer_layout(const NetworkSpec& spec) {
    std::vector<LayerSlot> layout;
    layout.reserve(spec.layer_count());
    std::size_t fan_in = spec.input_dim;
    std::size_t offset = 0;
    auto push = [&](std::size_t fan_out) {
        LayerSlot slot;
        slot.fan_in = fan_in;
        slot.fan_out = fan_out;
        slot.weight_offset = offset;
        offset += fan_in * fan_out;
        slot.has_bias = spec.bias;
        slot.bias_offset = offset;
        if (spec.bias) offset += fan_out;
        layout.push_back(slot);
        fan_in = fan_out;
    };
    for (auto w : spec.hidden_widths) push(w);
    push(1);
    return layout;
}

std::size_t NetworkSpec::param_count() const {
    std::size_t n = 0;
    std::size_t fan_in = input_dim;
    for (auto w : hidden_widths) {
        n += fan_in * w + (bias ? w : 0);
        fan_in = w;
    }
    return n + fan_in + (bias ? 1 : 0);
}

std::string NetworkSpec::fingerprint() const { return sha256_hex(to_json().dump()).substr(0, 16); }

nlohmann::json NetworkSpec::to_json() const {
    nlohmann::json j;
    j["input_dim"] = input_dim;
    j["hidden_widths"] = hidden_widths;
    j["activation"] = std::string(to_string(activation));
    j["bias"] = bias;
    if (!input_scale.empty()) j["input_scale"] = input_scale;
    return j;
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
    NetworkSpec s;
    try {
        s.input_dim = j.at("input_dim").get<std::size_t>();
        if (j.contains("hidden_widths")) s.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
        if (j.contains("activation")) s.activation = activation_from_string(j.at("activation").get<std::string>());
        if (j.contains("bias")) s.bias = j.at("bias").get<bool>();
        if (j.contains("input_scale")) s.input_scale = j.at("input_scale").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("network: ") + e.what());
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// ParamVector

ParamVector::ParamVector(const NetworkSpec& spec, Vector values)
    : spec_id_(spec.fingerprint()), layout_(layer_layout(spec)), values_(std::move(values)) {
    require_dims(static_cast<std::size_t>(values_.size()) == spec.param_count(),
                 "parameter vector length " + std::to_string(values_.size()) + " vs spec count " +
                     std::to_string(spec.param_count()));
}

ParamLocation ParamVector::locate(std::size_t k) const {
    if (k >= size()) throw DimensionError("parameter index out of range");
    for (std::size_t l = 0; l < layout_.size(); ++l) {
        const auto& s = layout_[l];
        if (k < s.weight_offset + s.fan_in * s.fan_out) {
            const auto local = k - s.weight_offset;
            return {l, local / s.fan_in, local % s.fan_in, false};
        }
        if (s.has_bias && k < s.bias_offset + s.fan_out) return {l, k - s.bias_offset, 0, true};
    }
    throw DimensionError("parameter index not covered by layout");
}

std::vector<LayerParams> ParamVector::unflatten() const {
    std::vector<LayerParams> layers;
    for (const auto& s : layout_) {
        LayerParams p;
        p.weight = Eigen::Map<const RowMatrix>(values_.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                                               static_cast<Eigen::Index>(s.fan_in));
        if (s.has_bias) p.bias = values_.segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.fan_out));
        layers.push_back(std::move(p));
    }
    return layers;
}

ParamVector ParamVector::flatten(const NetworkSpec& spec, const std::vector<LayerParams>& layers) {
    const auto layout = layer_layout(spec);
    require_dims(layers.size() == layout.size(), "layer count");
    Vector v(static_cast<Eigen::Index>(spec.param_count()));
    for (std::size_t l = 0; l < layout.size(); ++l) {
        const auto& s = layout[l];
        const auto& p = layers[l];
        require_dims(p.weight.rows() == static_cast<Eigen::Index>(s.fan_out) &&
                         p.weight.cols() == static_cast<Eigen::Index>(s.fan_in),
                     "layer weight shape");
        Eigen::Map<RowMatrix>(v.data() + s.weight_offset, p.weight.rows(), p.weight.cols()) = p.weight;
        if (s.has_bias) {
            require_dims(p.bias.size() == static_cast<Eigen::Index>(s.fan_out), "layer bias length");
            v.segment(static_cast<Eigen::Index>(s.bias_offset), p.bias.size()) = p.bias;
        }
    }
    return ParamVector(spec, std::move(v));
}

std::string ParamVector::fingerprint() const {
    Sha256 h;
    h.update(spec_id_);
    h.update(std::span<const double>(values_.data(), static_cast<std::size_t>(values_.size())));
    return h.hex().substr(0, 16);
}

ParamVector zero_params(const NetworkSpec& spec) {
    return ParamVector(spec, Vector::Zero(static_cast<Eigen::Index>(spec.param_count())));
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    Vector v = Vector::Zero(static_cast<Eigen::Index>(spec.param_count()));
    const double gain = spec.activation == Activation::relu ? 2.0 : 1.0;
    const auto layout = layer_layout(spec);
    for (std::size_t l = 0; l < layout.size(); ++l) {
        const auto& s = layout[l];
        // The readout layer has no activation after it.
        const double g = (l + 1 == layout.size()) ? 1.0 : gain;
        std::normal_distribution<double> normal(0.0, std::sqrt(g / static_cast<double>(s.fan_in)));
        for (std::size_t k = 0; k < s.fan_in * s.fan_out; ++k) v[static_cast<Eigen::Index>(s.weight_offset + k)] = normal(rng);
    }
    return ParamVector(spec, std::move(v));
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;

ConstRowMap weight_map(const ParamVector& p, const LayerSlot& s) {
    return ConstRowMap(p.values().data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                       static_cast<Eigen::Index>(s.fan_in));
}

Eigen::Map<const Vector> bias_map(const ParamVector& p, const LayerSlot& s) {
    return Eigen::Map<const Vector>(p.values().data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
}

void check_inputs(const NetworkSpec& spec, const ParamVector& params, VectorRef x) {
    require_dims(static_cast<std::size_t>(x.size()) == spec.input_dim,
                 "input length " + std::to_string(x.size()) + " vs input_dim " + std::to_string(spec.input_dim));
    require_dims(params.size() == spec.param_count() && params.matches(spec), "parameters do not belong to spec");
}

// Forward activations: post[0] is the (scaled) input, pre[l] / post[l+1] are the
// pre- and post-activation of hidden layer l.
struct Tape {
    std::vector<Vector> pre;
    std::vector<Vector> post;
    double output = 0.0;
};

Tape run_forward(const NetworkSpec& spec, const ParamVector& params, VectorRef x) {
    const auto& layout = params.layout();
    Tape t;
    t.post.reserve(layout.size());
    t.pre.reserve(layout.size() - 1);
    if (spec.input_scale.empty()) {
        t.post.emplace_back(x);
    } else {
        t.post.emplace_back(x.cwiseProduct(Eigen::Map<const Vector>(spec.input_scale.data(), x.size())));
    }
    for (std::size_t l = 0; l + 1 < layout.size(); ++l) {
        Vector z = weight_map(params, layout[l]) * t.post.back();
        if (layout[l].has_bias) z += bias_map(params, layout[l]);
        Vector h = z.unaryExpr([a = spec.activation](double v) { return activate(a, v); });
        t.pre.push_back(std::move(z));
        t.post.push_back(std::move(h));
    }
    const auto& last = layout.back();
    t.output = (weight_map(params, last) * t.post.back())(0);
    if (last.has_bias) t.output += params.values()[static_cast<Eigen::Index>(last.bias_offset)];
    return t;
}

}  // namespace

double forward(const NetworkSpec& spec, const ParamVector& params, VectorRef x) {
    check_inputs(spec, params, x);
    return run_forward(spec, params, x).output;
}

double param_jacobian_into(const NetworkSpec& spec, const ParamVector& params, VectorRef x, Eigen::Ref<Vector> out) {
    check_inputs(spec, params, x);
    require_dims(static_cast<std::size_t>(out.size()) == params.size(), "jacobian output length");
    const auto& layout = params.layout();
    const Tape t = run_forward(spec, params, x);

    const auto& last = layout.back();
    out.segment(static_cast<Eigen::Index>(last.weight_offset), static_cast<Eigen::Index>(last.fan_in)) = t.post.back();
    if (last.has_bias) out[static_cast<Eigen::Index>(last.bias_offset)] = 1.0;
    // Gradient with respect to the current post-activation.
    Vector g = weight_map(params, last).row(0).transpose();
    for (std::size_t l = layout.size() - 1; l-- > 0;) {
        const auto& s = layout[l];
        const Vector delta =
            g.cwiseProduct(t.pre[l].unaryExpr([a = spec.activation](double v) { return activate_d1(a, v); }));
        Eigen::Map<RowMatrix>(out.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                              static_cast<Eigen::Index>(s.fan_in)) = delta * t.post[l].transpose();
        if (s.has_bias) out.segment(static_cast<Eigen::Index>(s.bias_offset), delta.size()) = delta;
        if (l > 0) g = weight_map(params, s).transpose() * delta;
    }
    return t.output;
}

Vector param_jacobian(const NetworkSpec& spec, const ParamVector& params, VectorRef x) {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(params.size()));
    param_jacobian_into(spec, params, x, out);
    return out;
}

Vector mixed_jacobian_times(const NetworkSpec& spec, const ParamVector& params, VectorRef x, VectorRef v) {
    check_inputs(spec, params, x);
    require_dims(v.size() == x.size(), "direction length");
    const auto& layout = params.layout();
    const auto act = spec.activation;
    const Tape t = run_forward(spec, params, x);

    // Tangent of the forward pass in direction v.
    std::vector<Vector> dpre;
    std::vector<Vector> dpost;
    dpost.reserve(layout.size());
    if (spec.input_scale.empty()) {
        dpost.emplace_back(v);
    } else {
        dpost.emplace_back(v.cwiseProduct(Eigen::Map<const Vector>(spec.input_scale.data(), v.size())));
    }
    for (std::size_t l = 0; l + 1 < layout.size(); ++l) {
        Vector dz = weight_map(params, layout[l]) * dpost.back();
        Vector dh = dz.cwiseProduct(t.pre[l].unaryExpr([act](double z) { return activate_d1(act, z); }));
        dpre.push_back(std::move(dz));
        dpost.push_back(std::move(dh));
    }

    // Tangent of the reverse pass. Output-layer bias gradient is the constant 1.
    Vector out = Vector::Zero(static_cast<Eigen::Index>(params.size()));
    const auto& last = layout.back();
    out.segment(static_cast<Eigen::Index>(last.weight_offset), static_cast<Eigen::Index>(last.fan_in)) = dpost.back();
    Vector g = weight_map(params, last).row(0).transpose();
    Vector dg = Vector::Zero(g.size());
    for (std::size_t l = layout.size() - 1; l-- > 0;) {
        const auto& s = layout[l];
        const Vector d1 = t.pre[l].unaryExpr([act](double z) { return activate_d1(act, z); });
        const Vector d2 = t.pre[l].unaryExpr([act](double z) { return activate_d2(act, z); });
        const Vector delta = g.cwiseProduct(d1);
        const Vector ddelta = dg.cwiseProduct(d1) + g.cwiseProduct(d2).cwiseProduct(dpre[l]);
        Eigen::Map<RowMatrix>(out.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                              static_cast<Eigen::Index>(s.fan_in)) =
            ddelta * t.post[l].transpose() + delta * dpost[l].transpose();
        if (s.has_bias) out.segment(static_cast<Eigen::Index>(s.bias_offset), ddelta.size()) = ddelta;
        if (l > 0) {
            const auto w = weight_map(params, s);
            g = w.transpose() * delta;
            dg = w.transpose() * ddelta;
        }
    }
    return out;
}

Matrix mixed_jacobian(const NetworkSpec& spec, const ParamVector& params, VectorRef x) {
    check_inputs(spec, params, x);
    const auto d = static_cast<Eigen::Index>(spec.input_dim);
    Matrix m(static_cast<Eigen::Index>(params.size()), d);
    for (Eigen::Index j = 0; j < d; ++j) m.col(j) = mixed_jacobian_times(spec, params, x, Vector::Unit(d, j));
    return m;
}

double linearized_forward(const NetworkSpec& spec, const ParamVector& params_ref, const ParamVector& params, VectorRef x,
                          bool biased) {
    require_dims(params_ref.matches(spec) && params.matches(spec), "linearization parameters do not belong to spec");
    Vector jac(static_cast<Eigen::Index>(params.size()));
    const double f_ref = param_jacobian_into(spec, params_ref, x, jac);
    const double delta = (params.values() - params_ref.values()).dot(jac);
    return biased ? f_ref + delta : delta;
}

RowMatrix jacobian_matrix(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples, Vector* outputs) {
    require_dims(static_cast<std::size_t>(samples.cols()) == spec.input_dim, "sample width vs input_dim");
    RowMatrix jac(samples.rows(), static_cast<Eigen::Index>(params.size()));
    if (outputs) outputs->resize(samples.rows());
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        const Vector x = samples.row(i).transpose();
        const double f = param_jacobian_into(spec, params, x, jac.row(i).transpose());
        if (outputs) (*outputs)[i] = f;
    }
    return jac;
}

Vector forward_batch(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples) {
    require_dims(static_cast<std::size_t>(samples.cols()) == spec.input_dim, "sample width vs input_dim");
    Vector out(samples.rows());
    for (Eigen::Index i = 0; i < samples.rows(); ++i) out[i] = forward(spec, params, samples.row(i).transpose());
    return out;
}

}  // namespace ntk
