#include "promptreg/sidecar.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <json.hpp>

#include "promptreg/error.hpp"
#include "promptreg/io.hpp"
#include "promptreg/manifest.hpp"

extern char** environ;

namespace promptreg {

namespace fs = std::filesystem;
using nlohmann::json;

int run_process(const std::vector<std::string>& argv) {
  if (argv.empty()) throw BackendError("empty sidecar command");
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], nullptr, nullptr, args.data(), environ);
  if (rc != 0) throw BackendError("cannot launch sidecar '" + argv[0] + "'");
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw BackendError("lost sidecar process");
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

SidecarBackend::SidecarBackend(std::vector<std::string> command, fs::path work_dir)
    : command_(std::move(command)), work_dir_(std::move(work_dir)) {
  if (command_.empty()) throw ConfigError("sidecar backend needs a command");
  if (work_dir_.empty()) work_dir_ = fs::temp_directory_path() / "promptreg-sidecar";
}

PromptResponse SidecarBackend::segment(const PromptRequest& request) {
  const fs::path dir = fs::absolute(work_dir_) /
                       (std::string("request_") + tag_name(request.tag) + "_" +
                        std::to_string(requests_++));
  fs::remove_all(dir);
  fs::create_directories(dir / "out");
  json req;
  req["image"] = fs::absolute(request.image).string();
  req["prompts"] = request.prompts;
  req["slice_range"] = request.slices
                           ? json::array({request.slices->first, request.slices->last})
                           : json(nullptr);
  req["output_dir"] = (dir / "out").string();
  req["per_slice"] = request.per_slice;
  req["seed"] = request.seed;
  const fs::path request_path = dir / "request.json";
  write_text(request_path, req.dump(2));

  std::vector<std::string> argv = command_;
  argv.push_back(request_path.string());
  const int code = run_process(argv);
  const fs::path error_file = dir / "out" / "error.json";
  if (code != 0) {
    std::string detail;
    if (fs::exists(error_file)) {
      try {
        const json e = json::parse(read_text(error_file));
        detail = ": [" + e.value("stage", std::string("?")) + "] " +
                 e.value("message", std::string());
      } catch (const json::exception&) {
        detail = ": unreadable error.json";
      }
    }
    throw BackendError("sidecar exited with status " + std::to_string(code) + detail);
  }
  const fs::path manifest = dir / "out" / "response.json";
  if (!fs::exists(manifest)) throw BackendError("sidecar wrote no response.json");
  try {
    return read_response(manifest, request.tag);
  } catch (const FormatError& e) {
    throw BackendError(e.what());
  }
}

}  // namespace promptreg
