#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sst {

// Base class for every error raised by the library. Subclasses map one to one
// onto the failure categories callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SST_DEFINE_ERROR(Name)        \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

SST_DEFINE_ERROR(ShapeError)
SST_DEFINE_ERROR(DecodeError)
SST_DEFINE_ERROR(IOError)
SST_DEFINE_ERROR(WindowError)
SST_DEFINE_ERROR(ParameterError)
SST_DEFINE_ERROR(MissingTemplateError)
SST_DEFINE_ERROR(DataError)
SST_DEFINE_ERROR(DivergenceError)
SST_DEFINE_ERROR(VersionError)
SST_DEFINE_ERROR(ConfigError)
SST_DEFINE_ERROR(StageError)

#undef SST_DEFINE_ERROR

// Raised by verify_manifest; carries one line per violated record.
class VerificationError : public Error {
 public:
  VerificationError(const std::string& what, std::vector<std::string> violations)
      : Error(what), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

}  // namespace sst
