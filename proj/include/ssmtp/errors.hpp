// Copyright 2026 The ssm-tp Authors
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

namespace ssmtp {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value lies outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Channel count cannot be split evenly across the requested TP degree.
class ShardError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

// A cache entry does not match the layer, batch or channel range it is used with.
class CacheError : public Error {
 public:
  using Error::Error;
};

// Ranks disagreed on a collective (kind, shape, or participation).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssmtp
