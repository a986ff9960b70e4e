#include "t2i/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace t2i {
namespace {
std::atomic<LogLevel> threshold{LogLevel::warning};
std::mutex sink_mutex;

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
    case LogLevel::off: break;
  }
  return "";
}
}  // namespace

void set_log_level(LogLevel level) { threshold = level; }
LogLevel log_level() { return threshold; }

void log(LogLevel level, std::string_view message) {
  if (level < threshold.load() || level == LogLevel::off) return;
  std::lock_guard lock(sink_mutex);
  std::clog << "[t2i " << tag(level) << "] " << message << '\n';
}

}  // namespace t2i
