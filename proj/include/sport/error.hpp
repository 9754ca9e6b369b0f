#pragma once

#include <stdexcept>
#include <string>

namespace sport {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPORT_ERROR_TYPE(Name)                 \
  class Name : public Error {                  \
   public:                                     \
    using Error::Error;                        \
  }

// geometry
SPORT_ERROR_TYPE(DegenerateRotation);
SPORT_ERROR_TYPE(EmptyCloud);
SPORT_ERROR_TYPE(NoVisiblePoints);
// scene
SPORT_ERROR_TYPE(ZeroDistance);
SPORT_ERROR_TYPE(RegionSamplingExhausted);
// physics
SPORT_ERROR_TYPE(SceneMismatch);
// datagen
SPORT_ERROR_TYPE(UnknownCategory);
SPORT_ERROR_TYPE(GenerationExhausted);
SPORT_ERROR_TYPE(EmptyTemplateBank);
SPORT_ERROR_TYPE(UnparseableInstruction);
SPORT_ERROR_TYPE(IoError);
SPORT_ERROR_TYPE(FormatError);
// nn
SPORT_ERROR_TYPE(ShapeMismatch);
SPORT_ERROR_TYPE(NotScalarLoss);
SPORT_ERROR_TYPE(MissingGradient);
// encoder
SPORT_ERROR_TYPE(EmptyText);
SPORT_ERROR_TYPE(NonFinite);
SPORT_ERROR_TYPE(AlignmentError);
// diffusion
SPORT_ERROR_TYPE(BadTimestep);
SPORT_ERROR_TYPE(SamplingDegenerate);
SPORT_ERROR_TYPE(NonFiniteLoss);
// eval / cli
SPORT_ERROR_TYPE(EmptyResults);
SPORT_ERROR_TYPE(ConfigError);

#undef SPORT_ERROR_TYPE

}  // namespace sport
