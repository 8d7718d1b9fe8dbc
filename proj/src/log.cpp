#include "hypertone/log.hpp"

#include <cstdio>
#include <mutex>
#include <utility>

namespace hypertone {
namespace {

std::mutex g_sink_mutex;

LogSink& sink_ref() {
  static LogSink sink = [](const std::string& m) { std::fprintf(stderr, "warning: %s\n", m.c_str()); };
  return sink;
}

}  // namespace

LogSink set_warning_sink(LogSink sink) {
  std::lock_guard lock(g_sink_mutex);
  return std::exchange(sink_ref(), std::move(sink));
}

void warn(const std::string& message) {
  std::lock_guard lock(g_sink_mutex);
  if (sink_ref()) sink_ref()(message);
}

}  // namespace hypertone
