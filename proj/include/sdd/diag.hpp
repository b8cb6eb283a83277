#pragma once

#include <string>
#include <vector>

namespace sdd {

/// Emit a non-fatal warning. Goes to stderr unless a capture is active on
/// the calling thread.
void warn(const std::string& message);

/// Collects warnings raised on the current thread while alive.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  WarningCapture* previous_;
  friend void warn(const std::string&);
};

}  // namespace sdd
