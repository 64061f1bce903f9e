#ifndef GABORSCOPE_LOG_HPP
#define GABORSCOPE_LOG_HPP

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace gaborscope {

// Verbosity comes from GABORSCOPE_LOG: quiet | info (default) | debug.
enum class LogLevel : int { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* v = std::getenv("GABORSCOPE_LOG");
    if (!v) return LogLevel::Info;
    if (std::strcmp(v, "quiet") == 0) return LogLevel::Quiet;
    if (std::strcmp(v, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

template <class... Args>
void log_info(const char* fmt, Args... args) {
  if (log_level() >= LogLevel::Info) {
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
  }
}

template <class... Args>
void log_debug(const char* fmt, Args... args) {
  if (log_level() >= LogLevel::Debug) {
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
  }
}

}  // namespace gaborscope

#endif
