#ifndef GABORSCOPE_STAGES_HPP
#define GABORSCOPE_STAGES_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace gaborscope {

// Five-stage vocabulary used everywhere downstream. S3 and S4 are merged into
// SWS at ingest time, so they never appear as distinct labels here.
enum class StageLabel : std::uint8_t { Wake = 0, S1 = 1, S2 = 2, SWS = 3, REM = 4 };

inline constexpr int kNumStages = 5;

inline constexpr std::array<StageLabel, kNumStages> kAllStages = {
    StageLabel::Wake, StageLabel::S1, StageLabel::S2, StageLabel::SWS, StageLabel::REM};

inline const char* stage_name(StageLabel s) {
  switch (s) {
    case StageLabel::Wake: return "Wake";
    case StageLabel::S1: return "S1";
    case StageLabel::S2: return "S2";
    case StageLabel::SWS: return "SWS";
    case StageLabel::REM: return "REM";
  }
  return "?";
}

inline std::optional<StageLabel> stage_from_name(const std::string& name) {
  for (StageLabel s : kAllStages)
    if (name == stage_name(s)) return s;
  return std::nullopt;
}

// Thrown for malformed or inconsistent input data (files, labels, splits).
// The CLI maps it to a dedicated exit code.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when training encounters a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration(iteration) {}
  long iteration;
};

}  // namespace gaborscope

#endif
