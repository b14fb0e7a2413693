/*
 * SPDX-FileCopyrightText: Copyright 2026 The qkdsca Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace qkdsca {

/// Base of every error raised by the library. The CLI maps these to exit
/// code 1.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the domain of an operation.
class DomainError : public Error {
  public:
    using Error::Error;
};

/// Inconsistent acquisition or run configuration.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Slice or index outside the extent of a trace.
class BoundsError : public Error {
  public:
    using Error::Error;
};

/// Input has zero variance where a spread is required.
class DegenerateInputError : public Error {
  public:
    using Error::Error;
};

/// Window does not contain the expected rising edge.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// A sequence class has too few occurrences to build a template.
class CoverageError : public Error {
  public:
    CoverageError(const std::string &what, unsigned missing)
        : Error(what), missing_index(missing) {}
    unsigned missing_index;
};

/// Malformed file contents.
class ParseError : public Error {
  public:
    using Error::Error;
};

class BadMagicError : public ParseError {
  public:
    using ParseError::ParseError;
};

class VersionError : public ParseError {
  public:
    using ParseError::ParseError;
};

class TruncationError : public ParseError {
  public:
    TruncationError(const std::string &what, std::size_t expected_bytes,
                    std::size_t found_bytes)
        : ParseError(what), expected(expected_bytes), found(found_bytes) {}
    std::size_t expected;
    std::size_t found;
};

} // namespace qkdsca
