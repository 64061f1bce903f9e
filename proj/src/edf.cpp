#include "gaborscope/edf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace gaborscope {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string read_field(const std::vector<unsigned char>& bytes, std::size_t off, std::size_t len) {
  if (off + len > bytes.size())
    throw EdfError("field extends past end of file", off);
  return trim(std::string(bytes.begin() + off, bytes.begin() + off + len));
}

long read_int_field(const std::vector<unsigned char>& bytes, std::size_t off, std::size_t len,
                    const std::string& what) {
  std::string s = read_field(bytes, off, len);
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw EdfError("cannot parse " + what + " from \"" + s + "\"", off);
  }
}

double read_double_field(const std::vector<unsigned char>& bytes, std::size_t off, std::size_t len,
                         const std::string& what) {
  std::string s = read_field(bytes, off, len);
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw EdfError("cannot parse " + what + " from \"" + s + "\"", off);
  }
}

// Annotations in EDF+ live in ordinary signal slots as TAL byte streams:
// "onset[\x15duration]\x14text\x14...\x14\x00". The leading TAL of each record
// is a bare timestamp with no text, which we skip.
void parse_tal_region(const std::vector<unsigned char>& bytes, std::size_t off, std::size_t len,
                      std::vector<Annotation>* out) {
  std::size_t p = off;
  const std::size_t end = off + len;
  while (p < end && bytes[p] != 0) {
    std::size_t tal_end = p;
    while (tal_end < end && bytes[tal_end] != 0) ++tal_end;

    std::size_t q = p;
    while (q < tal_end && bytes[q] != 0x14) ++q;
    if (q == tal_end)
      throw EdfError("annotation onset is not terminated", p);
    std::string head(bytes.begin() + p, bytes.begin() + q);
    double onset = 0.0, duration = 0.0;
    std::size_t dur_sep = head.find('\x15');
    try {
      if (dur_sep == std::string::npos) {
        onset = std::stod(head);
      } else {
        onset = std::stod(head.substr(0, dur_sep));
        duration = std::stod(head.substr(dur_sep + 1));
      }
    } catch (const std::exception&) {
      throw EdfError("cannot parse annotation onset \"" + head + "\"", p);
    }

    // texts between successive \x14 bytes
    std::size_t t = q + 1;
    while (t <= tal_end) {
      std::size_t te = t;
      while (te < tal_end && bytes[te] != 0x14) ++te;
      if (te > t) {
        Annotation a;
        a.onset_s = onset;
        a.duration_s = duration;
        a.text = std::string(bytes.begin() + t, bytes.begin() + te);
        out->push_back(a);
      }
      if (te >= tal_end) break;
      t = te + 1;
    }

    p = tal_end;
    while (p < end && bytes[p] == 0) ++p;
  }
}

}  // namespace

const Channel* Recording::find_channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return &c;
  return nullptr;
}

Recording parse_edf(const std::vector<unsigned char>& bytes, const std::string& id) {
  if (bytes.size() < 256)
    throw EdfError("file shorter than the 256 byte fixed header", bytes.size());

  const long header_bytes = read_int_field(bytes, 184, 8, "header byte count");
  const long num_records = read_int_field(bytes, 236, 8, "data record count");
  const double record_duration = read_double_field(bytes, 244, 8, "record duration");
  const long ns = read_int_field(bytes, 252, 4, "signal count");

  if (ns <= 0) throw EdfError("signal count must be positive", 252);
  if (header_bytes != 256 * (ns + 1))
    throw EdfError("header byte count disagrees with signal count", 184);
  if (static_cast<std::size_t>(header_bytes) > bytes.size())
    throw EdfError("file shorter than its declared header", bytes.size());
  if (num_records < 0)
    throw EdfError("data record count must be non-negative", 236);
  if (record_duration <= 0.0)
    throw EdfError("record duration must be positive", 244);

  struct SignalHeader {
    std::string label;
    double phys_min, phys_max;
    long dig_min, dig_max;
    long samples_per_record;
    bool is_annotation;
  };
  std::vector<SignalHeader> sig(static_cast<std::size_t>(ns));
  const std::size_t n = static_cast<std::size_t>(ns);
  for (std::size_t i = 0; i < n; ++i) {
    SignalHeader& h = sig[i];
    h.label = read_field(bytes, 256 + 16 * i, 16);
    h.is_annotation = h.label == "EDF Annotations";
    h.phys_min = read_double_field(bytes, 256 + 104 * n + 8 * i, 8, "physical minimum");
    h.phys_max = read_double_field(bytes, 256 + 112 * n + 8 * i, 8, "physical maximum");
    h.dig_min = read_int_field(bytes, 256 + 120 * n + 8 * i, 8, "digital minimum");
    h.dig_max = read_int_field(bytes, 256 + 128 * n + 8 * i, 8, "digital maximum");
    h.samples_per_record = read_int_field(bytes, 256 + 216 * n + 8 * i, 8, "samples per record");
    if (h.samples_per_record <= 0)
      throw EdfError("samples per record must be positive", 256 + 216 * n + 8 * i);
    if (!h.is_annotation && h.dig_max == h.dig_min)
      throw EdfError("digital range is empty, scaling undefined", 256 + 120 * n + 8 * i);
  }

  std::size_t record_bytes = 0;
  for (const auto& h : sig) record_bytes += 2 * static_cast<std::size_t>(h.samples_per_record);
  const std::size_t expected =
      static_cast<std::size_t>(header_bytes) + static_cast<std::size_t>(num_records) * record_bytes;
  if (bytes.size() != expected)
    throw EdfError("data record count disagrees with file length (expected " +
                       std::to_string(expected) + " bytes, have " +
                       std::to_string(bytes.size()) + ")",
                   236);

  Recording rec;
  rec.id = id;
  rec.duration_s = record_duration * static_cast<double>(num_records);
  for (std::size_t i = 0; i < n; ++i) {
    if (sig[i].is_annotation) continue;
    for (const auto& c : rec.channels)
      if (c.name == sig[i].label)
        throw EdfError("duplicate channel label \"" + sig[i].label + "\"", 256 + 16 * i);
    Channel c;
    c.name = sig[i].label;
    c.sample_rate_hz = static_cast<double>(sig[i].samples_per_record) / record_duration;
    c.samples.reserve(static_cast<std::size_t>(num_records) *
                      static_cast<std::size_t>(sig[i].samples_per_record));
    rec.channels.push_back(std::move(c));
  }

  for (long r = 0; r < num_records; ++r) {
    std::size_t off = static_cast<std::size_t>(header_bytes) +
                      static_cast<std::size_t>(r) * record_bytes;
    std::size_t ch = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const SignalHeader& h = sig[i];
      const std::size_t span = 2 * static_cast<std::size_t>(h.samples_per_record);
      if (h.is_annotation) {
        parse_tal_region(bytes, off, span, &rec.annotations);
      } else {
        Channel& c = rec.channels[ch++];
        const double scale = (h.phys_max - h.phys_min) /
                             static_cast<double>(h.dig_max - h.dig_min);
        for (long s = 0; s < h.samples_per_record; ++s) {
          const std::size_t p = off + 2 * static_cast<std::size_t>(s);
          const auto dig = static_cast<std::int16_t>(
              static_cast<std::uint16_t>(bytes[p]) |
              (static_cast<std::uint16_t>(bytes[p + 1]) << 8));
          c.samples.push_back(h.phys_min +
                              static_cast<double>(dig - h.dig_min) * scale);
        }
      }
      off += span;
    }
  }

  std::stable_sort(rec.annotations.begin(), rec.annotations.end(),
                   [](const Annotation& a, const Annotation& b) { return a.onset_s < b.onset_s; });
  return rec;
}

Recording parse_edf_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  std::string base = path;
  std::size_t slash = base.find_last_of('/');
  if (slash != std::string::npos) base = base.substr(slash + 1);
  std::size_t dot = base.find_last_of('.');
  if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
  return parse_edf(bytes, base);
}

namespace {

// Returns the stage for a label, nullopt for excluded epochs, throws on
// anything unrecognized.
std::optional<StageLabel> stage_for_annotation(const Annotation& a) {
  const std::string& t = a.text;
  if (t == "Sleep stage W") return StageLabel::Wake;
  if (t == "Sleep stage 1") return StageLabel::S1;
  if (t == "Sleep stage 2") return StageLabel::S2;
  if (t == "Sleep stage 3" || t == "Sleep stage 4") return StageLabel::SWS;
  if (t == "Sleep stage R") return StageLabel::REM;
  if (t == "Sleep stage ?" || t == "Movement time") return std::nullopt;
  throw DataError("unknown sleep stage label \"" + t + "\" at onset " +
                  std::to_string(a.onset_s) + " s");
}

bool is_sleep_annotation(const Annotation& a) {
  const std::string& t = a.text;
  return t.rfind("Sleep stage ", 0) == 0 || t == "Movement time";
}

}  // namespace

std::vector<Annotation> filter_sleep_annotations(const std::vector<Annotation>& annotations) {
  std::vector<Annotation> out;
  for (const auto& a : annotations)
    if (is_sleep_annotation(a)) out.push_back(a);
  return out;
}

Hypnogram map_hypnogram(const std::vector<Annotation>& annotations) {
  constexpr double kEpoch = 30.0;
  Hypnogram h;
  double prev_end = 0.0;
  for (const auto& a : annotations) {
    const auto stage = stage_for_annotation(a);
    if (a.onset_s < prev_end)
      throw DataError("overlapping or unordered stage annotations at onset " +
                      std::to_string(a.onset_s) + " s");
    if (a.duration_s <= 0.0 || std::fmod(a.duration_s, kEpoch) != 0.0)
      throw DataError("stage duration " + std::to_string(a.duration_s) +
                      " s at onset " + std::to_string(a.onset_s) +
                      " s is not a positive multiple of 30 s");
    if (std::fmod(a.onset_s, kEpoch) != 0.0)
      throw DataError("stage onset " + std::to_string(a.onset_s) +
                      " s is not aligned to the 30 s epoch grid");
    const auto first = static_cast<std::size_t>(a.onset_s / kEpoch);
    const auto count = static_cast<std::size_t>(a.duration_s / kEpoch);
    if (h.epochs.size() < first + count) h.epochs.resize(first + count);
    for (std::size_t e = first; e < first + count; ++e) h.epochs[e] = stage;
    prev_end = a.onset_s + a.duration_s;
  }
  return h;
}

std::vector<Annotation> parse_hypnogram_csv(const std::string& text) {
  std::vector<Annotation> out;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "onset_s,duration_s,label")
        throw DataError("hypnogram csv must start with header onset_s,duration_s,label");
      continue;
    }
    std::size_t c1 = line.find(',');
    std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
      throw DataError("hypnogram csv line " + std::to_string(line_no) +
                      " does not have three fields");
    Annotation a;
    try {
      a.onset_s = std::stod(line.substr(0, c1));
      a.duration_s = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const std::exception&) {
      throw DataError("hypnogram csv line " + std::to_string(line_no) +
                      " has a non-numeric onset or duration");
    }
    a.text = trim(line.substr(c2 + 1));
    out.push_back(a);
  }
  return out;
}

std::vector<Annotation> parse_hypnogram_csv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_hypnogram_csv(ss.str());
}

void derive_channel(Recording& rec, const std::string& out_name, const std::string& a,
                    const std::string& b) {
  const Channel* ca = rec.find_channel(a);
  const Channel* cb = rec.find_channel(b);
  if (!ca) throw DataError("channel \"" + a + "\" not found in " + rec.id);
  if (!cb) throw DataError("channel \"" + b + "\" not found in " + rec.id);
  if (rec.find_channel(out_name))
    throw DataError("channel \"" + out_name + "\" already exists in " + rec.id);
  if (ca->sample_rate_hz != cb->sample_rate_hz)
    throw DataError("cannot derive " + out_name + ": sample rates differ (" +
                    std::to_string(ca->sample_rate_hz) + " vs " +
                    std::to_string(cb->sample_rate_hz) + ")");
  Channel out;
  out.name = out_name;
  out.sample_rate_hz = ca->sample_rate_hz;
  const std::size_t len = std::min(ca->samples.size(), cb->samples.size());
  out.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) out.samples[i] = ca->samples[i] - cb->samples[i];
  rec.channels.push_back(std::move(out));
}

}  // namespace gaborscope
