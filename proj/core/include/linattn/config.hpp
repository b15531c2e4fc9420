#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "linattn/errors.hpp"

namespace linattn {

enum class FeatureMap { relu, elu_plus_one, identity };
enum class GlobalScale { none, inverse_count };

FeatureMap feature_map_from_string(std::string_view s);
GlobalScale global_scale_from_string(std::string_view s);
std::string to_string(FeatureMap fm);
std::string to_string(GlobalScale gs);

// Hyperparameters of the augmented attention op.
struct AttnConfig {
    size_t d_model = 64;
    size_t n_heads = 1;
    size_t head_dim = 64;
    size_t group_size = 64;   // G, tokens per group
    size_t conv_kernel = 1;   // k, taps of the value convolution
    double alpha = 1.0;       // mixing weight of the global branch
    FeatureMap feature_map = FeatureMap::relu;
    GlobalScale global_scale = GlobalScale::none;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || head_dim == 0)
            throw config_error("AttnConfig: dimensions must be positive");
        if (d_model != n_heads * head_dim)
            throw config_error("AttnConfig: d_model must equal n_heads * head_dim");
        if (group_size < 1) throw config_error("AttnConfig: group_size must be >= 1");
        if (conv_kernel < 1) throw config_error("AttnConfig: conv_kernel must be >= 1");
        if (alpha < 0.0) throw config_error("AttnConfig: alpha must be >= 0");
    }
};

}  // namespace linattn
