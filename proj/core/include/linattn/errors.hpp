#pragma once

#include <stdexcept>
#include <string>

namespace linattn {

// Shape or dimension mismatch between operands.
struct dim_error : std::invalid_argument {
    explicit dim_error(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid configuration (AttnConfig / ModelConfig / tree limits / config files).
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed tree topology (bad parent indices, non-topological order).
struct structure_error : std::invalid_argument {
    explicit structure_error(const std::string& what) : std::invalid_argument(what) {}
};

// API contract violation (folding a non-full group, reusing a consumed cache).
struct contract_error : std::logic_error {
    explicit contract_error(const std::string& what) : std::logic_error(what) {}
};

// NaN/Inf encountered where only finite values are allowed.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid runtime input (token id out of range, sequence overflow).
struct input_error : std::invalid_argument {
    explicit input_error(const std::string& what) : std::invalid_argument(what) {}
};

// Training diverged (NaN loss).
struct train_error : std::runtime_error {
    explicit train_error(const std::string& what) : std::runtime_error(what) {}
};

// Snapshot blob malformed or incompatible.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace linattn
