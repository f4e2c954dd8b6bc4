#pragma once

#include <stdexcept>
#include <string>

namespace elec {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VocabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateBatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimizerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SamplerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace elec
