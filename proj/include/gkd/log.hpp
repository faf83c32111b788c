#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace gkd::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::info};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline void write(Level level, std::string_view tag, std::string_view msg) {
  if (level < threshold().load()) return;
  std::cerr << "[" << tag << "] " << msg << "\n";
}

inline void info(std::string_view msg) { write(Level::info, "info", msg); }
inline void warn(std::string_view msg) { write(Level::warn, "warn", msg); }
inline void debug(std::string_view msg) { write(Level::debug, "debug", msg); }

}  // namespace gkd::log
