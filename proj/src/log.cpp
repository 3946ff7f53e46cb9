#include "vmoe/log.hpp"

#include <iostream>
#include <utility>

namespace vmoe {

namespace {

LogSink& sink() {
  static LogSink s;
  return s;
}

}  // namespace

LogSink set_warning_sink(LogSink s) { return std::exchange(sink(), std::move(s)); }

void log_warning(const std::string& message) {
  if (sink()) {
    sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace vmoe
