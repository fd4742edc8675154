#pragma once

#include <stdexcept>
#include <string>

namespace partialfl {

// Shape/dimension mismatches between tensors, layers or parameter vectors.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Bad values: labels out of range, non-finite numbers, invalid hyperparameters.
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

// API called in the wrong order (e.g. backward without a cached forward).
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// Config file problems; message carries the offending key and line.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Violations of the federation protocol (empty aggregation, unknown ids, ...).
class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Positive-pair bookkeeping broken: sample ids of two batches do not line up.
class PairingError : public std::runtime_error {
public:
    explicit PairingError(const std::string& what) : std::runtime_error(what) {}
};

// A required modality is absent and no imputation was requested.
class ModalityError : public std::runtime_error {
public:
    explicit ModalityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace partialfl
