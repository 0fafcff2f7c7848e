#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bagan {

// Base of every contract error raised by the library. The CLI maps any of
// these to a nonzero exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define BAGAN_DEFINE_ERROR(Name)                                                                                       \
    class Name : public Error {                                                                                        \
    public:                                                                                                            \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {}                                          \
    }

// dataset_pipeline
BAGAN_DEFINE_ERROR(MissingSource);
BAGAN_DEFINE_ERROR(UndecodableImage);
BAGAN_DEFINE_ERROR(LabelMismatch);
BAGAN_DEFINE_ERROR(AlreadyScaled);
BAGAN_DEFINE_ERROR(InvalidSchedule);

// network_zoo
BAGAN_DEFINE_ERROR(InvalidConfig);
BAGAN_DEFINE_ERROR(OutOfRangeLabel);
BAGAN_DEFINE_ERROR(DimMismatch);
BAGAN_DEFINE_ERROR(ShapeMismatch);

// autoencoder_init / gan_trainer
BAGAN_DEFINE_ERROR(NonFiniteLoss);
BAGAN_DEFINE_ERROR(EmptyClass);
BAGAN_DEFINE_ERROR(NotPSD);
BAGAN_DEFINE_ERROR(CheckpointIncompatible);
BAGAN_DEFINE_ERROR(CheckpointCorrupt);
BAGAN_DEFINE_ERROR(DiskFull);

// losses
BAGAN_DEFINE_ERROR(NonFiniteInput);
BAGAN_DEFINE_ERROR(NonFiniteGradient);
BAGAN_DEFINE_ERROR(ClassCountOne);

// evaluation
BAGAN_DEFINE_ERROR(TooFewSamples);
BAGAN_DEFINE_ERROR(ComplexResidual);
BAGAN_DEFINE_ERROR(EmptyClassInValidation);
BAGAN_DEFINE_ERROR(MissingRealExample);
BAGAN_DEFINE_ERROR(SingleClass);
BAGAN_DEFINE_ERROR(ExtractorUnavailable);

// cli
BAGAN_DEFINE_ERROR(ConfigError);

#undef BAGAN_DEFINE_ERROR

class TargetExceedsAvailable : public Error {
public:
    TargetExceedsAvailable(int cls, std::int64_t requested, std::int64_t available)
        : Error("TargetExceedsAvailable: class " + std::to_string(cls) + " requested " + std::to_string(requested)
                + " but only " + std::to_string(available) + " available"),
          cls(cls), requested(requested), available(available)
    {
    }
    int cls;
    std::int64_t requested;
    std::int64_t available;
};

} // namespace bagan
