#pragma once

#include <stdexcept>
#include <string>

namespace t2i {

enum class ErrorKind {
  config,
  dimension,
  data,
  numeric,
  format,
  version,
  name_mismatch,
  contract,
  io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define T2I_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

T2I_DEFINE_ERROR(ConfigError, config)
T2I_DEFINE_ERROR(DimensionError, dimension)
T2I_DEFINE_ERROR(DataError, data)
T2I_DEFINE_ERROR(NumericError, numeric)
T2I_DEFINE_ERROR(FormatError, format)
T2I_DEFINE_ERROR(VersionError, version)
T2I_DEFINE_ERROR(NameMismatchError, name_mismatch)
T2I_DEFINE_ERROR(ContractError, contract)
T2I_DEFINE_ERROR(IoError, io)

#undef T2I_DEFINE_ERROR

}  // namespace t2i
