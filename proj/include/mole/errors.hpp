// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module. The CLI maps these onto exit
// codes: validation-type errors exit 1, I/O and backend errors exit 2.

#pragma once

#include <stdexcept>
#include <string>

namespace mole {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// -- validation family (exit code 1) --

class ShapeError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class VocabError : public Error {
public:
    using Error::Error;
};

class LengthError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// Response from a backend did not follow the expected line grammar.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::string raw)
        : Error(what), raw_response_(std::move(raw)) {}
    const std::string& raw_response() const noexcept { return raw_response_; }

private:
    std::string raw_response_;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class BatchError : public Error {
public:
    using Error::Error;
};

// -- environment family (exit code 2) --

class IoError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    BackendError(const std::string& what, int attempts, bool retryable = true)
        : Error(what), attempts_(attempts), retryable_(retryable) {}
    int attempts() const noexcept { return attempts_; }
    bool retryable() const noexcept { return retryable_; }

private:
    int attempts_;
    bool retryable_;
};

}  // namespace mole
