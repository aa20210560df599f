#pragma once

#include <stdexcept>
#include <string>

namespace lacoat {

// Bad input, bad config, or a violated precondition. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A bundle or model file that cannot be read or fails its shape/finite checks.
class LoadError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Chat-completion request failed after all retries. status == 0 means no HTTP response at all.
class TransportError : public std::runtime_error {
public:
    TransportError(const std::string& what, int status)
        : std::runtime_error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

// A response body that is not a well-formed chat completion.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lacoat
