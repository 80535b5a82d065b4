#pragma once

#include <stdexcept>
#include <string>

namespace voxseq {

// Every error raised by the library derives from Error and carries a short
// category name so the CLI and HTTP layers can map it to exit codes/statuses.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define VOXSEQ_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(tag, what) {}        \
  };

VOXSEQ_DEFINE_ERROR(DimensionError, "dimension")
VOXSEQ_DEFINE_ERROR(ConstraintError, "constraint")
VOXSEQ_DEFINE_ERROR(EpisodeFinishedError, "episode-finished")
VOXSEQ_DEFINE_ERROR(BoundsError, "bounds")
VOXSEQ_DEFINE_ERROR(PlanningError, "planning")
VOXSEQ_DEFINE_ERROR(StorageError, "storage")
VOXSEQ_DEFINE_ERROR(LengthError, "length")
VOXSEQ_DEFINE_ERROR(TrainingError, "training")
VOXSEQ_DEFINE_ERROR(UsageError, "usage")
VOXSEQ_DEFINE_ERROR(StatisticsError, "statistics")
VOXSEQ_DEFINE_ERROR(DomainError, "domain")

#undef VOXSEQ_DEFINE_ERROR

}  // namespace voxseq
