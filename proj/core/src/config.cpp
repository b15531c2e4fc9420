#include "linattn/config.hpp"

namespace linattn {

FeatureMap feature_map_from_string(std::string_view s) {
    if (s == "relu") return FeatureMap::relu;
    if (s == "elu_plus_one") return FeatureMap::elu_plus_one;
    if (s == "identity") return FeatureMap::identity;
    throw config_error("unknown feature map '" + std::string(s) +
                       "' (expected relu, elu_plus_one, or identity)");
}

GlobalScale global_scale_from_string(std::string_view s) {
    if (s == "none") return GlobalScale::none;
    if (s == "inverse_count") return GlobalScale::inverse_count;
    throw config_error("unknown global scale '" + std::string(s) +
                       "' (expected none or inverse_count)");
}

std::string to_string(FeatureMap fm) {
    switch (fm) {
        case FeatureMap::relu: return "relu";
        case FeatureMap::elu_plus_one: return "elu_plus_one";
        case FeatureMap::identity: return "identity";
    }
    throw config_error("invalid FeatureMap value");
}

std::string to_string(GlobalScale gs) {
    switch (gs) {
        case GlobalScale::none: return "none";
        case GlobalScale::inverse_count: return "inverse_count";
    }
    throw config_error("invalid GlobalScale value");
}

}  // namespace linattn
