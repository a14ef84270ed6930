#pragma once

#include <stdexcept>
#include <string>

namespace moma {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape / dimension contract violations.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape: " + what) {}
};

// Out-of-range or otherwise invalid argument values.
class ValueError : public Error {
public:
    explicit ValueError(const std::string& what) : Error("value: " + what) {}
};

// File system and serialization failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io: " + what) {}
};

// Checkpoint format violations (magic, version, checksum, manifest).
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& what) : Error("checkpoint: " + what) {}
};

// Run configuration problems; the CLI maps these to exit code 2.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

}  // namespace moma
