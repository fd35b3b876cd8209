#include "entbias/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace entbias::log {
namespace {

Level initial_level() {
  const char* env = std::getenv("ENTBIAS_LOG");
  if (env == nullptr) return Level::kWarn;
  const std::string v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "info") return Level::kInfo;
  if (v == "error") return Level::kError;
  if (v == "off") return Level::kOff;
  return Level::kWarn;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{initial_level()};
  return level;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

constexpr std::string_view tag(Level l) {
  switch (l) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
    case Level::kOff: break;
  }
  return "";
}

}  // namespace

Level level() { return current().load(); }
void set_level(Level l) { current().store(l); }

void write(Level l, std::string_view message) {
  if (l < level()) return;
  std::lock_guard lock(sink_mutex());
  std::clog << "[entbias " << tag(l) << "] " << message << '\n';
}

}  // namespace entbias::log
