// Copyright 2026 The heartmur Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace heartmur {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete type onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (WAV, embedding bridge, checkpoint, manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that this library deliberately does not handle.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// CirCor patient metadata could not be interpreted.
class MetadataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in the wrong lifecycle state (e.g. backward
/// without a recorded forward graph).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared during training or optimization.
class NumericsError : public Error {
 public:
  using Error::Error;
};

/// Inputs are individually valid but inconsistent with one another
/// (missing embeddings, mismatched prediction coverage, id mismatches).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace heartmur
