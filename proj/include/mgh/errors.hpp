#pragma once

#include <stdexcept>
#include <string>

namespace mgh {

/// Base of every error raised by the engine. The CLI maps NumericError to
/// exit code 2 and every other Error to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class PartitionError : public Error { using Error::Error; };
class TopologyError : public Error { using Error::Error; };
class BatchError : public Error { using Error::Error; };
class CorpusError : public Error { using Error::Error; };
class ProtocolError : public Error { using Error::Error; };

} // namespace mgh
