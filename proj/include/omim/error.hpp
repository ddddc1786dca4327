// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace omim {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition violation detectable before any work.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling ran out of attempts; the image is too small for the request.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Structured checkpoint corruption (bad magic, version, truncated record...).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// A cached mask file no longer matches the content hash of its source image.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

}  // namespace omim
