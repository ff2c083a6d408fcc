#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"
#include "knobtuner/evaluation.hpp"

namespace knobtuner {

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string shell_quote(const std::string& s) { return "'" + replace_all(s, "'", "'\\''") + "'"; }

double epoch_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct ProcessOutput {
  std::string out;
  std::string err;
  int status = 0;
  bool timed_out = false;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  ~Fd() { reset(); }

  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

ProcessOutput run_shell(const std::string& command, std::chrono::duration<double> timeout) {
  int out_pipe[2];
  int err_pipe[2];
  if (::pipe(out_pipe) != 0) throw Error(ErrorCode::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
  if (::pipe(err_pipe) != 0) {
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    throw Error(ErrorCode::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    throw Error(ErrorCode::SpawnFailure, std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    for (int fd : {out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  Fd out_fd(out_pipe[0]);
  Fd err_fd(err_pipe[0]);

  ProcessOutput result;
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
  bool exited = false;
  char buf[4096];
  while (true) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      break;
    }
    if (out_fd.get() < 0 && err_fd.get() < 0) {
      const pid_t r = ::waitpid(pid, &result.status, WNOHANG);
      if (r == pid) {
        exited = true;
        break;
      }
      ::usleep(10000);
      continue;
    }
    pollfd fds[2] = {{out_fd.get(), POLLIN, 0}, {err_fd.get(), POLLIN, 0}};
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    const int rc = ::poll(fds, 2, static_cast<int>(std::min<long long>(remaining + 1, 100)));
    if (rc < 0 && errno != EINTR) break;
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const ssize_t n = ::read(fds[i].fd, buf, sizeof(buf));
      if (n > 0) {
        (i == 0 ? result.out : result.err).append(buf, static_cast<std::size_t>(n));
      } else {
        (i == 0 ? out_fd : err_fd).reset();
      }
    }
  }
  if (!exited) {
    ::kill(-pid, SIGKILL);
    ::waitpid(pid, &result.status, 0);
  }
  return result;
}

std::string last_nonempty_line(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::string last;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) last = line;
  }
  return last;
}

}  // namespace

MetricsLine parse_metrics_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("metrics line is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("tps") || !j["tps"].is_number()) {
    throw Error(ErrorCode::ParseError, "metrics line lacks a numeric \"tps\" field");
  }
  MetricsLine m;
  m.tps = j["tps"].get<double>();
  if (m.tps < 0) throw Error(ErrorCode::ParseError, "negative tps");
  if (const auto it = j.find("errors"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorCode::ParseError, "\"errors\" must be an array of strings");
    for (const auto& e : *it) {
      if (!e.is_string()) throw Error(ErrorCode::ParseError, "\"errors\" must be an array of strings");
      m.errors.push_back(e.get<std::string>());
    }
  }
  if (const auto it = j.find("timestamps"); it != j.end() && it->is_object()) {
    if (it->contains("deployed") && (*it)["deployed"].is_number()) m.deployed_at = (*it)["deployed"].get<double>();
    if (it->contains("finished") && (*it)["finished"].is_number()) m.finished_at = (*it)["finished"].get<double>();
  }
  return m;
}

ExternalEvaluator::ExternalEvaluator(ExternalOptions options) : options_(std::move(options)) {
  if (options_.command_template.find("{config_path}") == std::string::npos ||
      options_.command_template.find("{workload_path}") == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument,
                "evaluation command must reference {config_path} and {workload_path}");
  }
  if (options_.work_dir.empty()) {
    options_.work_dir = std::filesystem::temp_directory_path() / fmt::format("knobtuner-{}", ::getpid());
  }
}

EvalResult ExternalEvaluator::evaluate(const Configuration& config, const WorkloadSpec& workload) {
  std::filesystem::create_directories(options_.work_dir);
  const auto run = ++run_counter_;
  const auto config_path = options_.work_dir / fmt::format("config-{:04}.json", run);
  const auto workload_path = options_.work_dir / fmt::format("workload-{:04}.json", run);
  {
    std::ofstream(config_path) << config.to_json().dump(2) << "\n";
    std::ofstream(workload_path) << workload.to_json().dump(2) << "\n";
  }
  std::string command = replace_all(options_.command_template, "{config_path}", shell_quote(config_path.string()));
  command = replace_all(command, "{workload_path}", shell_quote(workload_path.string()));

  const double started_at = epoch_seconds();
  const auto t0 = std::chrono::steady_clock::now();
  const ProcessOutput proc = run_shell(command, options_.timeout);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!proc.out.empty()) spdlog::debug("benchmark stdout:\n{}", proc.out);
  if (!proc.err.empty()) spdlog::debug("benchmark stderr:\n{}", proc.err);

  EvalResult result;
  if (proc.timed_out) {
    result = EvalResult::failure("timeout", fmt::format("benchmark exceeded {:.1f} s timeout", options_.timeout.count()));
  } else if (!WIFEXITED(proc.status) || WEXITSTATUS(proc.status) != 0) {
    const std::string why = WIFEXITED(proc.status) ? fmt::format("exit status {}", WEXITSTATUS(proc.status))
                                                   : fmt::format("killed by signal {}", WTERMSIG(proc.status));
    result = EvalResult::failure("benchmark", why);
  } else {
    try {
      const MetricsLine m = parse_metrics_line(last_nonempty_line(proc.out));
      result.throughput = m.tps;
      for (const auto& e : m.errors) result.run_errors.push_back({"benchmark", e});
      if (m.deployed_at) {
        result.deploy_seconds = *m.deployed_at - started_at;
        if (m.finished_at) result.eval_seconds = *m.finished_at - *m.deployed_at;
      }
    } catch (const Error& e) {
      result = EvalResult::failure("metrics", e.what());
    }
  }
  result.wall_seconds = wall;
  if (!result.deploy_seconds) {
    result.deploy_seconds = 0.0;
    result.eval_seconds = wall;
  }
  return result;
}

}  // namespace knobtuner
