#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "promptreg/segmenter.hpp"

namespace promptreg {

// Client side of the directory-based model exchange. Each request gets its
// own directory under `work_dir` holding request.json; the sidecar is run
// as `command... <request.json>` and must exit 0 after writing
// response.json (see manifest.hpp) into the request's output_dir. A
// nonzero exit or a missing manifest is a BackendError; an error.json
// {stage, message} left by the sidecar is folded into the message.
class SidecarBackend final : public SegmenterBackend {
 public:
  SidecarBackend(std::vector<std::string> command, std::filesystem::path work_dir);

  std::string id() const override { return "sidecar"; }
  PromptResponse segment(const PromptRequest& request) override;

 private:
  std::vector<std::string> command_;
  std::filesystem::path work_dir_;
  int requests_ = 0;
};

// Runs argv[0] (PATH lookup) with the given arguments and waits; returns the
// exit status, or throws BackendError if the process cannot be started.
int run_process(const std::vector<std::string>& argv);

}  // namespace promptreg
