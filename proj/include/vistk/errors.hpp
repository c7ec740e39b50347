#pragma once

#include <stdexcept>
#include <string>

namespace vistk {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define VISTK_DEFINE_ERROR(NAME)                                               \
    class NAME : public Error {                                                \
    public:                                                                    \
        using Error::Error;                                                    \
    }

// RLE counts do not sum to width*height.
VISTK_DEFINE_ERROR(CountsMismatch);
// Downsampling requested on dimensions not divisible by the factor.
VISTK_DEFINE_ERROR(IndivisibleShape);
// Annotation JSON missing or ill-typed field; message carries the JSON path.
VISTK_DEFINE_ERROR(SchemaError);
// video_id / category_id / instance lookup failed to resolve.
VISTK_DEFINE_ERROR(DanglingReference);
VISTK_DEFINE_ERROR(EmptyInput);
// Two mask sequences disagree on frame resolution.
VISTK_DEFINE_ERROR(ResolutionMismatch);
// Weight tensor shapes inconsistent with the declared hyperparameters.
VISTK_DEFINE_ERROR(WeightShapeMismatch);
VISTK_DEFINE_ERROR(NonFiniteActivation);
VISTK_DEFINE_ERROR(CoordOutOfBounds);
VISTK_DEFINE_ERROR(EmptyClip);
// File could not be read/written/parsed at the I/O layer.
VISTK_DEFINE_ERROR(IoError);

#undef VISTK_DEFINE_ERROR

} // namespace vistk
