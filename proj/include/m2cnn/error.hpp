#pragma once

#include <stdexcept>
#include <string>

namespace m2cnn {

/// Root of every error the library throws. Callers that only need a message
/// can catch this; the subclasses let tests and the CLI discriminate.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define M2CNN_DEFINE_ERROR(Name)           \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

M2CNN_DEFINE_ERROR(DimensionError);
M2CNN_DEFINE_ERROR(ContractError);
M2CNN_DEFINE_ERROR(ParameterError);
M2CNN_DEFINE_ERROR(ConfigurationError);
M2CNN_DEFINE_ERROR(EmptyImageError);
M2CNN_DEFINE_ERROR(LabelError);
M2CNN_DEFINE_ERROR(ValueError);
M2CNN_DEFINE_ERROR(DegenerateRatingsError);
M2CNN_DEFINE_ERROR(DivergenceError);
M2CNN_DEFINE_ERROR(FormatError);
M2CNN_DEFINE_ERROR(CorruptionError);
M2CNN_DEFINE_ERROR(IngestionError);
M2CNN_DEFINE_ERROR(IoError);

#undef M2CNN_DEFINE_ERROR

}  // namespace m2cnn
