#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntklab/types.hpp"

namespace ntk {

enum class Activation { relu, gelu, tanh };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

// Pointwise activation value and its first two derivatives. relu'(0) := 0.
double activate(Activation a, double z);
double activate_d1(Activation a, double z);
double activate_d2(Activation a, double z);

// Fully connected scalar-output network. Hidden layers apply the activation,
// the last layer is affine. An optional frozen (non-trainable) per-coordinate
// scale multiplies the input before the first layer; it is how anisotropic
// networks are built.
struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    Activation activation = Activation::relu;
    bool bias = true;
    std::vector<double> input_scale;  // empty: identity

    void validate() const;
    std::size_t param_count() const;
    std::size_t layer_count() const { return hidden_widths.size() + 1; }
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static NetworkSpec from_json(const nlohmann::json& j);

    static NetworkSpec linear(std::size_t d, bool bias = true) {
        NetworkSpec s;
        s.input_dim = d;
        s.bias = bias;
        return s;
    }
    static NetworkSpec mlp(std::size_t d, std::vector<std::size_t> hidden, Activation act, bool bias = true) {
        NetworkSpec s;
        s.input_dim = d;
        s.hidden_widths = std::move(hidden);
        s.activation = act;
        s.bias = bias;
        return s;
    }
};

// Position of one affine layer inside the flat parameter vector. Weights are
// stored row-major as fan_out x fan_in, followed by fan_out biases.
struct LayerSlot {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    bool has_bias = false;
};

std::vector<LayerSlot> layer_layout(const NetworkSpec& spec);

struct ParamLocation {
    std::size_t layer = 0;
    std::size_t row = 0;
    std::size_t col = 0;  // meaningless for biases
    bool is_bias = false;
};

struct LayerParams {
    Matrix weight;
    Vector bias;  // empty when the spec has no biases
};

class ParamVector {
public:
    ParamVector() = default;
    ParamVector(const NetworkSpec& spec, Vector values);

    const Vector& values() const { return values_; }
    Vector& values() { return values_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
    const std::string& spec_id() const { return spec_id_; }
    const std::vector<LayerSlot>& layout() const { return layout_; }

    ParamLocation locate(std::size_t flat_index) const;
    std::vector<LayerParams> unflatten() const;
    static ParamVector flatten(const NetworkSpec& spec, const std::vector<LayerParams>& layers);

    std::string fingerprint() const;
    bool matches(const NetworkSpec& spec) const { return spec_id_ == spec.fingerprint(); }

private:
    std::string spec_id_;
    std::vector<LayerSlot> layout_;
    Vector values_;
};

ParamVector zero_params(const NetworkSpec& spec);

// He-style Gaussian: variance 2/fan_in for relu, 1/fan_in otherwise; zero biases.
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

double forward(const NetworkSpec& spec, const ParamVector& params, VectorRef x);

// Gradient of the scalar output with respect to every parameter.
Vector param_jacobian(const NetworkSpec& spec, const ParamVector& params, VectorRef x);

// Same, writing into `out` (length n); returns the forward value.
double param_jacobian_into(const NetworkSpec& spec, const ParamVector& params, VectorRef x,
                           Eigen::Ref<Vector> out);

// n x d matrix of second derivatives d^2 f / (d theta_k d x_j).
Matrix mixed_jacobian(const NetworkSpec& spec, const ParamVector& params, VectorRef x);

// mixed_jacobian(x) * v computed with a single tangent pass.
Vector mixed_jacobian_times(const NetworkSpec& spec, const ParamVector& params, VectorRef x, VectorRef v);

// f_ref(x) + (theta - theta_ref)^T grad f_ref(x); the first term is dropped when !biased.
double linearized_forward(const NetworkSpec& spec, const ParamVector& params_ref, const ParamVector& params,
                          VectorRef x, bool biased);

// One Jacobian per row of `samples` (m x d) -> m x n.
RowMatrix jacobian_matrix(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                          Vector* outputs = nullptr);

Vector forward_batch(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples);

}  // namespace ntk
