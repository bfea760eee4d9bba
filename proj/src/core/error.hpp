// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ifield {

// Error taxonomy mirrored by the C API status codes.
struct Error : std::runtime_error {
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
    using Error::Error;
};

// A well-formed input that violates a documented invariant.
struct InvalidArgument : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// A pipeline stage was invoked before the artifact it consumes exists.
struct MissingArtifact : Error {
    using Error::Error;
};

// Training hit a non-finite loss or gradient.
struct Diverged : Error {
    using Error::Error;
};

}  // namespace ifield
