#pragma once

#include <stdexcept>
#include <string>

namespace phlora {

// Base class for all library errors. Catching phlora::Error catches everything
// the library throws on its own; std::bad_alloc and filesystem errors pass through.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeMismatch : public Error {
public:
    explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

class ConvergenceFailure : public Error {
public:
    explicit ConvergenceFailure(const std::string& msg) : Error("SVD did not converge: " + msg) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error("validation: " + msg) {}
};

// checkpoint container errors
class MalformedHeader : public Error {
public:
    explicit MalformedHeader(const std::string& msg) : Error("malformed header: " + msg) {}
};

class SpanOutOfBounds : public Error {
public:
    explicit SpanOutOfBounds(const std::string& msg) : Error("tensor span: " + msg) {}
};

class DuplicateName : public Error {
public:
    explicit DuplicateName(const std::string& msg) : Error("duplicate tensor name: " + msg) {}
};

class NotTwoDimensional : public Error {
public:
    explicit NotTwoDimensional(const std::string& msg) : Error("not a 2-D tensor: " + msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

// energy / rank selection
class InvalidThreshold : public Error {
public:
    explicit InvalidThreshold(const std::string& msg) : Error("invalid threshold: " + msg) {}
};

// adapter directory errors
class InconsistentRank : public Error {
public:
    explicit InconsistentRank(const std::string& msg) : Error("inconsistent rank: " + msg) {}
};

class EmptyAdapter : public Error {
public:
    explicit EmptyAdapter(const std::string& msg) : Error("empty adapter: " + msg) {}
};

class MissingCounterpart : public Error {
public:
    explicit MissingCounterpart(const std::string& msg) : Error("missing counterpart: " + msg) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& msg) : Error("dimension mismatch: " + msg) {}
};

class MalformedConfig : public Error {
public:
    explicit MalformedConfig(const std::string& msg) : Error("malformed config: " + msg) {}
};

} // namespace phlora
