#pragma once

#include <stdexcept>
#include <string>

namespace disam {

// Base for all recoverable failures raised by the library. Subcommands map
// these to exit code 1 (bad input) or 2 (runtime failure).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define DISAM_DEFINE_ERROR(Name)        \
  struct Name : Error {                 \
    using Error::Error;                 \
  }

// datamodel
DISAM_DEFINE_ERROR(MalformedRecord);
DISAM_DEFINE_ERROR(DuplicateId);
DISAM_DEFINE_ERROR(MissingPoseForDatabase);
DISAM_DEFINE_ERROR(UnknownDomain);

// network / checkpoints
DISAM_DEFINE_ERROR(InvalidConfig);
DISAM_DEFINE_ERROR(ShapeMismatch);
DISAM_DEFINE_ERROR(IoError);
DISAM_DEFINE_ERROR(VersionMismatch);
DISAM_DEFINE_ERROR(CorruptCheckpoint);

// losses / trainer
DISAM_DEFINE_ERROR(EmptyCandidates);
DISAM_DEFINE_ERROR(NonpositiveMargin);
DISAM_DEFINE_ERROR(TooFewDomains);
DISAM_DEFINE_ERROR(NanLoss);
DISAM_DEFINE_ERROR(EmptyPool);

// retrieval
DISAM_DEFINE_ERROR(MissingPose);
DISAM_DEFINE_ERROR(EmptyDatabase);
DISAM_DEFINE_ERROR(FingerprintMismatch);

// evaluation
DISAM_DEFINE_ERROR(MissingGroundTruth);
DISAM_DEFINE_ERROR(MissingPlaceLabel);
DISAM_DEFINE_ERROR(NonUnitQuaternion);

// cli
DISAM_DEFINE_ERROR(UnknownCommand);
DISAM_DEFINE_ERROR(FlagConflict);

#undef DISAM_DEFINE_ERROR

}  // namespace disam
