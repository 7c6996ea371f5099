#include "amcl/log.hpp"

#include <iostream>
#include <mutex>

namespace amcl {
namespace {

std::mutex sink_mutex;
LogSink current_sink;

}  // namespace

void set_warning_sink(LogSink sink) {
  std::lock_guard lock(sink_mutex);
  current_sink = std::move(sink);
}

void log_warning(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  if (current_sink) {
    current_sink(message);
    return;
  }
  std::clog << "amcl: warning: " << message << '\n';
}

}  // namespace amcl
