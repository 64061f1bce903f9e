#ifndef GABORSCOPE_EDF_HPP
#define GABORSCOPE_EDF_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gaborscope/stages.hpp"

namespace gaborscope {

// Parse failure tied to a position in the file, so a bad export can be
// inspected with a hex editor at the reported offset.
class EdfError : public DataError {
 public:
  EdfError(const std::string& msg, std::size_t byte_offset)
      : DataError(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset(byte_offset) {}
  std::size_t byte_offset;
};

struct Annotation {
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::string text;
};

struct Channel {
  std::string name;
  double sample_rate_hz = 0.0;
  std::vector<double> samples;  // physical units after linear scaling
};

struct Recording {
  std::string id;
  std::string subject;
  int night = 1;
  double duration_s = 0.0;
  std::vector<Channel> channels;
  std::vector<Annotation> annotations;  // timestamped text from EDF+ annotation signals

  const Channel* find_channel(const std::string& name) const;
};

// Parses a complete EDF or EDF+ byte buffer. 16-bit little-endian samples are
// mapped to physical units with the header's linear scaling; annotation
// signals become Recording::annotations instead of channels. Malformed input
// raises EdfError with the offending byte offset.
Recording parse_edf(const std::vector<unsigned char>& bytes, const std::string& id);
Recording parse_edf_file(const std::string& path);

// Per-epoch stage sequence; nullopt marks epochs excluded from scoring
// (movement time and unscored spans).
struct Hypnogram {
  std::vector<std::optional<StageLabel>> epochs;
};

// Expands (onset, duration, label) annotations into 30 s epoch labels.
// Accepted labels: Sleep stage W/1/2/3/4/R, Sleep stage ?, Movement time.
// Stages 3 and 4 merge into SWS; "?" and movement are excluded epochs. Any
// other label, overlapping spans, out-of-order onsets, onsets off the 30 s
// grid, or durations that are not positive multiples of 30 raise DataError.
Hypnogram map_hypnogram(const std::vector<Annotation>& annotations);

// Keeps only the annotations map_hypnogram understands; everything else in an
// EDF+ file (timestamps, device markers) is dropped.
std::vector<Annotation> filter_sleep_annotations(const std::vector<Annotation>& annotations);

// CSV fallback with header line "onset_s,duration_s,label".
std::vector<Annotation> parse_hypnogram_csv(const std::string& text);
std::vector<Annotation> parse_hypnogram_csv_file(const std::string& path);

// Adds channel `out_name` = a - b (samplewise). Both sources must exist and
// share a sample rate; the output name must be fresh.
void derive_channel(Recording& rec, const std::string& out_name, const std::string& a,
                    const std::string& b);

}  // namespace gaborscope

#endif
