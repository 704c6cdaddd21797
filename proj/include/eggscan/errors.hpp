#pragma once

#include <stdexcept>
#include <string>

namespace eggscan {

// Base class for every error the library throws.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed us data that violates a documented precondition.
class invalid_input : public error {
 public:
  using error::error;
};

// Configuration or manifest is malformed; message names the offending field.
class config_error : public error {
 public:
  using error::error;
};

// A classifier backend failed (process exit, malformed reply, protocol abuse).
class backend_error : public error {
 public:
  using error::error;
};

// Filesystem-level failure (unreadable/unwritable path, short file).
class io_error : public error {
 public:
  using error::error;
};

}  // namespace eggscan
