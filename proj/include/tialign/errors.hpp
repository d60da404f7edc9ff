#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tialign {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller violated a precondition (bad argument, missing file, malformed record).
class InputError : public Error {
public:
    using Error::Error;
};

/// No parseable payload could be extracted from a backend response.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A payload parsed but violated the expected schema. Carries the violation list.
class SchemaError : public Error {
public:
    SchemaError(const std::string& msg, std::vector<std::string> violations)
        : Error(msg), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    std::vector<std::string> violations_;
};

/// A model backend failed at the transport level. Retryable by the caller.
class BackendError : public Error {
public:
    explicit BackendError(const std::string& msg, bool retryable = true)
        : Error(msg), retryable_(retryable) {}

    bool retryable() const { return retryable_; }

private:
    bool retryable_ = true;
};

/// All decomposition retries were exhausted. Carries the last raw backend output.
class DecompositionError : public Error {
public:
    DecompositionError(const std::string& msg, std::string last_raw)
        : Error(msg), last_raw_(std::move(last_raw)) {}

    const std::string& last_raw_output() const { return last_raw_; }

private:
    std::string last_raw_;
};

/// A cache key already holds a different payload. Signals a nondeterministic backend.
class CacheCorruptionError : public Error {
public:
    using Error::Error;
};

/// A prompt is outside the oracle grammar.
class UnsupportedPromptError : public Error {
public:
    using Error::Error;
};

} // namespace tialign
