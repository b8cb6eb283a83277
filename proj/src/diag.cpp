#include "sdd/diag.hpp"

#include <iostream>

namespace sdd {
namespace {
thread_local WarningCapture* active_capture = nullptr;
}

WarningCapture::WarningCapture() : previous_(active_capture) { active_capture = this; }

WarningCapture::~WarningCapture() { active_capture = previous_; }

void warn(const std::string& message) {
  if (active_capture != nullptr) {
    active_capture->messages_.push_back(message);
    return;
  }
  std::cerr << "warning: " << message << '\n';
}

}  // namespace sdd
