#pragma once

#include <functional>
#include <string>

namespace amcl {

using LogSink = std::function<void(const std::string&)>;

/// Default sink writes "amcl: warning: ..." to std::clog. Pass nullptr to
/// restore the default.
void set_warning_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace amcl
