#pragma once

#include <stdexcept>
#include <string>

namespace b3d {

enum class ErrorKind {
  parameter,
  range,
  shape,
  policy,
  config,
  precondition,
  remote,
  protocol,
  integrity,
  storage,
  scoring,
  caption,
};

// Base of every error the library throws. The kind decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define B3D_DEFINE_ERROR(Name, Kind)                                       \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

B3D_DEFINE_ERROR(ParameterError, parameter)
B3D_DEFINE_ERROR(RangeError, range)
B3D_DEFINE_ERROR(ShapeError, shape)
B3D_DEFINE_ERROR(PolicyError, policy)
B3D_DEFINE_ERROR(ConfigError, config)
B3D_DEFINE_ERROR(PreconditionError, precondition)
B3D_DEFINE_ERROR(RemoteError, remote)
B3D_DEFINE_ERROR(ProtocolError, protocol)
B3D_DEFINE_ERROR(IntegrityError, integrity)
B3D_DEFINE_ERROR(StorageError, storage)
B3D_DEFINE_ERROR(ScoringError, scoring)
B3D_DEFINE_ERROR(CaptionError, caption)

#undef B3D_DEFINE_ERROR

// Stable process exit codes: 0 success, 1 unexpected, 2 configuration,
// 3 precondition, 4 remote service, 5 integrity.
constexpr int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parameter:
    case ErrorKind::range:
    case ErrorKind::shape:
    case ErrorKind::policy:
    case ErrorKind::config:
      return 2;
    case ErrorKind::precondition:
    case ErrorKind::scoring:
    case ErrorKind::caption:
      return 3;
    case ErrorKind::remote:
    case ErrorKind::protocol:
      return 4;
    case ErrorKind::integrity:
      return 5;
    case ErrorKind::storage:
      return 1;
  }
  return 1;
}

}  // namespace b3d
