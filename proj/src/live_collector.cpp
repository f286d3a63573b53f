#include "tracehound/live_collector.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/ioctl.h>
#include <sys/mman.h>
#include <sys/ptrace.h>
#include <sys/syscall.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <time.h>
#include <unistd.h>

#include <linux/perf_event.h>

namespace tracehound {

namespace {

constexpr std::uint64_t kPerfContextMax = static_cast<std::uint64_t>(-4095LL);
constexpr std::size_t kRingDataPages = 64;  // 256 KiB data area

std::uint64_t now_monotonic_ns() {
  timespec ts{};
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ull +
         static_cast<std::uint64_t>(ts.tv_nsec);
}

long perf_event_open(perf_event_attr* attr, pid_t pid, int cpu, int group_fd,
                     unsigned long flags) {
  return syscall(SYS_perf_event_open, attr, pid, cpu, group_fd, flags);
}

bool force_no_live() {
  const char* v = std::getenv("TRACEHOUND_FORCE_NO_LIVE");
  return v && std::string(v) == "1";
}

perf_event_attr sampler_attr(std::uint64_t period_ns) {
  perf_event_attr attr{};
  attr.type = PERF_TYPE_SOFTWARE;
  attr.size = sizeof(attr);
  attr.config = PERF_COUNT_SW_TASK_CLOCK;
  attr.sample_period = period_ns;
  attr.sample_type = PERF_SAMPLE_IP | PERF_SAMPLE_TID | PERF_SAMPLE_TIME | PERF_SAMPLE_CPU |
                     PERF_SAMPLE_PERIOD | PERF_SAMPLE_CALLCHAIN;
  attr.exclude_kernel = 1;
  attr.exclude_hv = 1;
  attr.exclude_callchain_kernel = 1;
  attr.disabled = 1;
  attr.use_clockid = 1;
  attr.clockid = CLOCK_MONOTONIC;
  attr.wakeup_events = 1;
  return attr;
}

perf_event_attr sched_attr() {
  perf_event_attr attr{};
  attr.type = PERF_TYPE_SOFTWARE;
  attr.size = sizeof(attr);
  attr.config = PERF_COUNT_SW_DUMMY;
  attr.sample_type = PERF_SAMPLE_TID | PERF_SAMPLE_TIME | PERF_SAMPLE_CPU;
  attr.sample_id_all = 1;
  attr.context_switch = 1;
  attr.exclude_kernel = 1;
  attr.exclude_hv = 1;
  attr.disabled = 1;
  attr.use_clockid = 1;
  attr.clockid = CLOCK_MONOTONIC;
  attr.watermark = 1;
  attr.wakeup_watermark = 1;
  return attr;
}

// One mmapped perf event and its ring buffer.
class PerfRing {
 public:
  PerfRing() = default;
  PerfRing(const PerfRing&) = delete;
  PerfRing& operator=(const PerfRing&) = delete;
  ~PerfRing() { close_ring(); }

  void open(perf_event_attr attr, pid_t pid, const char* mechanism) {
    const long fd = perf_event_open(&attr, pid, -1, -1, PERF_FLAG_FD_CLOEXEC);
    if (fd < 0) {
      throw LiveError(LiveError::Code::attach_failure, mechanism,
                      std::string("perf_event_open (") + mechanism +
                          "): " + std::strerror(errno));
    }
    fd_ = static_cast<int>(fd);
    const std::size_t page = static_cast<std::size_t>(sysconf(_SC_PAGESIZE));
    map_size_ = (1 + kRingDataPages) * page;
    void* ring = mmap(nullptr, map_size_, PROT_READ | PROT_WRITE, MAP_SHARED, fd_, 0);
    if (ring == MAP_FAILED) {
      const int saved = errno;
      close_ring();
      throw LiveError(LiveError::Code::attach_failure, mechanism,
                      std::string("mmap perf ring (") + mechanism +
                          "): " + std::strerror(saved));
    }
    meta_ = static_cast<perf_event_mmap_page*>(ring);
    data_ = static_cast<char*>(ring) + page;
    data_size_ = kRingDataPages * page;
  }

  void enable() const { ioctl(fd_, PERF_EVENT_IOC_ENABLE, 0); }
  void disable() const { ioctl(fd_, PERF_EVENT_IOC_DISABLE, 0); }
  int fd() const { return fd_; }
  bool is_open() const { return fd_ >= 0; }

  // Copies out complete records (handling wrap) and hands each to `handler`
  // as (header, body bytes).
  template <typename Handler>
  void drain(Handler&& handler) {
    if (!meta_) return;
    const std::uint64_t head = __atomic_load_n(&meta_->data_head, __ATOMIC_ACQUIRE);
    std::uint64_t tail = meta_->data_tail;
    while (tail + sizeof(perf_event_header) <= head) {
      perf_event_header header{};
      copy_out(&header, tail, sizeof(header));
      if (header.size < sizeof(header) || tail + header.size > head) break;
      scratch_.resize(header.size);
      copy_out(scratch_.data(), tail, header.size);
      handler(header, scratch_.data() + sizeof(header), header.size - sizeof(header));
      tail += header.size;
    }
    __atomic_store_n(&meta_->data_tail, tail, __ATOMIC_RELEASE);
  }

 private:
  void copy_out(void* dst, std::uint64_t offset, std::size_t len) const {
    const std::uint64_t pos = offset & (data_size_ - 1);
    const std::size_t first = std::min<std::size_t>(len, data_size_ - pos);
    std::memcpy(dst, data_ + pos, first);
    if (first < len) std::memcpy(static_cast<char*>(dst) + first, data_, len - first);
  }

  void close_ring() {
    if (meta_) {
      munmap(meta_, map_size_);
      meta_ = nullptr;
    }
    if (fd_ >= 0) {
      close(fd_);
      fd_ = -1;
    }
  }

  int fd_ = -1;
  perf_event_mmap_page* meta_ = nullptr;
  char* data_ = nullptr;
  std::size_t data_size_ = 0;
  std::size_t map_size_ = 0;
  std::vector<char> scratch_;
};

struct FieldReader {
  const char* p;
  std::size_t left;

  template <typename T>
  T take() {
    T v{};
    if (left >= sizeof(T)) {
      std::memcpy(&v, p, sizeof(T));
      p += sizeof(T);
      left -= sizeof(T);
    } else {
      left = 0;
    }
    return v;
  }
};

Pid read_tgid(pid_t tid) {
  char path[64];
  std::snprintf(path, sizeof(path), "/proc/%d/status", tid);
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tgid:", 0) == 0) {
      return static_cast<Pid>(std::strtoull(line.c_str() + 5, nullptr, 10));
    }
  }
  return static_cast<Pid>(tid);
}

std::string read_exe(pid_t tid) {
  char path[64];
  std::snprintf(path, sizeof(path), "/proc/%d/exe", tid);
  char buf[4096];
  const ssize_t n = readlink(path, buf, sizeof(buf) - 1);
  if (n <= 0) return "?";
  buf[n] = '\0';
  return buf;
}

// Lifecycle probe: can we trace our own children? Spawns a short-lived child
// that requests tracing and stops; any failure downgrades the report.
bool probe_ptrace(std::string& reason) {
  const pid_t pid = fork();
  if (pid < 0) {
    reason = "fork failed: " + std::string(std::strerror(errno));
    return false;
  }
  if (pid == 0) {
    if (ptrace(PTRACE_TRACEME, 0, nullptr, nullptr) == -1) _exit(99);
    raise(SIGSTOP);
    _exit(0);
  }
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) {
    reason = "waitpid failed: " + std::string(std::strerror(errno));
    kill(pid, SIGKILL);
    return false;
  }
  if (WIFEXITED(status)) {
    reason = "ptrace(PTRACE_TRACEME) denied (yama/ptrace_scope or seccomp)";
    return false;
  }
  ptrace(PTRACE_KILL, pid, nullptr, nullptr);
  kill(pid, SIGKILL);
  waitpid(pid, &status, 0);
  return true;
}

bool probe_perf(perf_event_attr attr, std::string& reason, const char* what) {
  attr.disabled = 1;
  const long fd = perf_event_open(&attr, 0, -1, -1, PERF_FLAG_FD_CLOEXEC);
  if (fd < 0) {
    reason = std::string(what) + " unavailable: perf_event_open: " + std::strerror(errno);
    return false;
  }
  close(static_cast<int>(fd));
  return true;
}

// Collects and timestamps events during a live session.
class Session {
 public:
  explicit Session(const LiveSessionConfig& config) : config_(config) {}

  SessionResult run();

 private:
  std::uint64_t rel_ts(std::uint64_t abs_ns) const {
    return abs_ns > origin_ ? abs_ns - origin_ : 0;
  }
  std::uint64_t now_rel() const { return rel_ts(now_monotonic_ns()); }

  void spawn_child();
  void handle_stop(pid_t tid, int status);
  void attach_perf();
  void drain_perf();
  void emit_lifecycle_fork(pid_t parent_tid, pid_t child_tid);

  const LiveSessionConfig& config_;
  std::uint64_t origin_ = 0;
  pid_t root_ = -1;
  int exec_errno_pipe_ = -1;
  bool perf_attached_ = false;
  PerfRing sampler_;
  PerfRing switches_;
  std::vector<TraceEvent> events_;
  std::set<pid_t> live_;
  // Forked tids whose first stop has not arrived yet, and stopped tids whose
  // fork announcement has not arrived yet. A child is released only after its
  // fork event is emitted so its own events cannot precede it.
  std::set<pid_t> announced_;
  std::set<pid_t> parked_;
  int root_exit_code_ = 0;
};

void Session::spawn_child() {
  int err_pipe[2];
  if (pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw LiveError(LiveError::Code::child_spawn_failure, "spawn",
                    std::string("pipe2: ") + std::strerror(errno));
  }
  std::vector<std::string> argv_store = config_.command;
  std::vector<char*> argv;
  for (std::string& arg : argv_store) argv.push_back(arg.data());
  argv.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) {
    close(err_pipe[0]);
    close(err_pipe[1]);
    throw LiveError(LiveError::Code::child_spawn_failure, "spawn",
                    std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    close(err_pipe[0]);
    if (ptrace(PTRACE_TRACEME, 0, nullptr, nullptr) == -1) _exit(126);
    raise(SIGSTOP);
    execvp(argv[0], argv.data());
    const int saved = errno;
    ssize_t ignored = write(err_pipe[1], &saved, sizeof(saved));
    (void)ignored;
    _exit(127);
  }
  close(err_pipe[1]);
  exec_errno_pipe_ = err_pipe[0];
  root_ = pid;

  // Hold at the pre-exec stop to set options; the child stays stopped until
  // everything below is wired up.
  int status = 0;
  if (waitpid(root_, &status, 0) < 0 || !WIFSTOPPED(status)) {
    close(exec_errno_pipe_);
    throw LiveError(LiveError::Code::child_spawn_failure, "spawn",
                    "child did not reach its initial stop");
  }
  const long opts = PTRACE_O_TRACEFORK | PTRACE_O_TRACEVFORK | PTRACE_O_TRACECLONE |
                    PTRACE_O_TRACEEXEC | PTRACE_O_TRACEEXIT | PTRACE_O_EXITKILL;
  if (ptrace(PTRACE_SETOPTIONS, root_, nullptr, opts) == -1) {
    const int saved = errno;
    kill(root_, SIGKILL);
    waitpid(root_, &status, 0);
    close(exec_errno_pipe_);
    throw LiveError(LiveError::Code::attach_failure, "lifecycle",
                    std::string("ptrace(PTRACE_SETOPTIONS): ") + std::strerror(saved));
  }
  live_.insert(root_);
  if (config_.enable_lifecycle) {
    emit_lifecycle_fork(static_cast<pid_t>(getpid()), root_);
  }
  ptrace(PTRACE_CONT, root_, nullptr, nullptr);
}

void Session::emit_lifecycle_fork(pid_t parent_tid, pid_t child_tid) {
  events_.push_back(make_fork(now_rel(), read_tgid(parent_tid), static_cast<Tid>(parent_tid), 0,
                              read_tgid(child_tid), static_cast<Tid>(child_tid)));
}

void Session::attach_perf() {
  if (perf_attached_) return;
  perf_attached_ = true;
  if (config_.enable_sampling) {
    sampler_.open(sampler_attr(*config_.sample_period_ns), root_, "sampling");
    sampler_.enable();
  }
  if (config_.enable_sched) {
    switches_.open(sched_attr(), root_, "sched");
    switches_.enable();
  }
}

void Session::drain_perf() {
  if (sampler_.is_open()) {
    sampler_.drain([&](const perf_event_header& h, const char* body, std::size_t len) {
      if (h.type != PERF_RECORD_SAMPLE) return;
      FieldReader r{body, len};
      const std::uint64_t ip = r.take<std::uint64_t>();
      const std::uint32_t pid = r.take<std::uint32_t>();
      const std::uint32_t tid = r.take<std::uint32_t>();
      const std::uint64_t time = r.take<std::uint64_t>();
      const std::uint32_t cpu = r.take<std::uint32_t>();
      r.take<std::uint32_t>();  // res
      const std::uint64_t period = r.take<std::uint64_t>();
      const std::uint64_t nr = r.take<std::uint64_t>();
      std::vector<std::uint64_t> stack;
      for (std::uint64_t i = 0; i < nr; ++i) {
        const std::uint64_t frame = r.take<std::uint64_t>();
        if (frame < kPerfContextMax && frame != 0) stack.push_back(frame);
      }
      if (stack.empty()) {
        if (ip == 0) return;
        stack.push_back(ip);
      }
      if (pid == 0 || tid == 0 || period == 0) return;
      events_.push_back(make_sample(rel_ts(time), pid, tid, cpu, std::move(stack), period));
    });
  }
  if (switches_.is_open()) {
    switches_.drain([&](const perf_event_header& h, const char* body, std::size_t len) {
      if (h.type != PERF_RECORD_SWITCH) return;
      // sample_id trailer for TID|TIME|CPU: pid,tid,time,cpu,res
      if (len < 24) return;
      FieldReader r{body + len - 24, 24};
      const std::uint32_t pid = r.take<std::uint32_t>();
      const std::uint32_t tid = r.take<std::uint32_t>();
      const std::uint64_t time = r.take<std::uint64_t>();
      const std::uint32_t cpu = r.take<std::uint32_t>();
      if (pid == 0 || tid == 0) return;
      if (h.misc & PERF_RECORD_MISC_SWITCH_OUT) {
        const WaitKind wait = (h.misc & PERF_RECORD_MISC_SWITCH_OUT_PREEMPT)
                                  ? WaitKind::runnable
                                  : WaitKind::blocked;
        events_.push_back(make_switch_out(rel_ts(time), pid, tid, cpu, wait));
      } else {
        events_.push_back(make_switch_in(rel_ts(time), pid, tid, cpu));
      }
    });
  }
}

void Session::handle_stop(pid_t tid, int status) {
  const int sig = WSTOPSIG(status);
  const unsigned event = static_cast<unsigned>(status) >> 16;
  int deliver = 0;

  switch (event) {
    case PTRACE_EVENT_FORK:
    case PTRACE_EVENT_VFORK:
    case PTRACE_EVENT_CLONE: {
      unsigned long msg = 0;
      ptrace(PTRACE_GETEVENTMSG, tid, nullptr, &msg);
      const pid_t child = static_cast<pid_t>(msg);
      if (config_.enable_lifecycle) emit_lifecycle_fork(tid, child);
      live_.insert(child);
      if (parked_.erase(child)) {
        // Child already hit its first stop; release it now that its fork
        // event is in the buffer.
        ptrace(PTRACE_CONT, child, nullptr, nullptr);
      } else {
        announced_.insert(child);
      }
      break;
    }
    case PTRACE_EVENT_EXEC: {
      if (config_.enable_lifecycle) {
        events_.push_back(
            make_exec(now_rel(), read_tgid(tid), static_cast<Tid>(tid), 0, read_exe(tid)));
      }
      if (tid == root_) {
        attach_perf();
        if (!config_.enable_lifecycle) {
          // Probes are wired; stop observing this task. Detach resumes it,
          // and its eventual exit still reports through waitpid.
          ptrace(PTRACE_DETACH, root_, nullptr, nullptr);
          return;
        }
      }
      break;
    }
    case PTRACE_EVENT_EXIT: {
      unsigned long msg = 0;
      ptrace(PTRACE_GETEVENTMSG, tid, nullptr, &msg);
      const int st = static_cast<int>(msg);
      const std::int32_t code =
          WIFEXITED(st) ? WEXITSTATUS(st) : (WIFSIGNALED(st) ? 128 + WTERMSIG(st) : -1);
      if (config_.enable_lifecycle) {
        events_.push_back(
            make_exit(now_rel(), read_tgid(tid), static_cast<Tid>(tid), 0, code));
      }
      break;
    }
    default: {
      // Plain signal-delivery or group stop.
      if (live_.find(tid) == live_.end() && !announced_.count(tid)) {
        // First stop of a child whose fork event has not been processed yet;
        // hold it until the announcement arrives.
        parked_.insert(tid);
        return;
      }
      if (announced_.erase(tid)) {
        // Auto-attach stop of a just-forked child: swallow.
        live_.insert(tid);
      } else if (sig != SIGTRAP && sig != SIGSTOP) {
        deliver = sig;
      }
      break;
    }
  }
  ptrace(PTRACE_CONT, tid, nullptr, reinterpret_cast<void*>(static_cast<intptr_t>(deliver)));
}

SessionResult Session::run() {
  origin_ = now_monotonic_ns();
  spawn_child();

  while (!live_.empty()) {
    int status = 0;
    const pid_t tid = waitpid(-1, &status, __WALL | WNOHANG);
    if (tid < 0) {
      if (errno == ECHILD) break;
      if (errno == EINTR) continue;
      break;
    }
    if (tid == 0) {
      if (perf_attached_ && (sampler_.is_open() || switches_.is_open())) {
        pollfd fds[2];
        nfds_t n = 0;
        if (sampler_.is_open()) fds[n++] = {sampler_.fd(), POLLIN, 0};
        if (switches_.is_open()) fds[n++] = {switches_.fd(), POLLIN, 0};
        poll(fds, n, 10);
        drain_perf();
      } else {
        usleep(2000);
      }
      continue;
    }
    if (WIFEXITED(status) || WIFSIGNALED(status)) {
      live_.erase(tid);
      parked_.erase(tid);
      announced_.erase(tid);
      if (tid == root_) {
        root_exit_code_ =
            WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
      }
      continue;
    }
    if (WIFSTOPPED(status)) {
      handle_stop(tid, status);
    }
  }

  if (perf_attached_) {
    sampler_.disable();
    switches_.disable();
    drain_perf();
  }

  // An exec failure means the command never ran; report it instead of
  // emitting a bogus trace.
  int exec_errno = 0;
  if (exec_errno_pipe_ >= 0) {
    if (read(exec_errno_pipe_, &exec_errno, sizeof(exec_errno)) != sizeof(exec_errno)) {
      exec_errno = 0;
    }
    close(exec_errno_pipe_);
  }
  if (exec_errno != 0) {
    throw LiveError(LiveError::Code::child_spawn_failure, "spawn",
                    "exec '" + config_.command.front() + "': " + std::strerror(exec_errno));
  }

  std::stable_sort(events_.begin(), events_.end(),
                   [](const TraceEvent& a, const TraceEvent& b) {
                     if (a.ts != b.ts) return a.ts < b.ts;
                     return a.cpu < b.cpu;
                   });

  SessionResult result;
  result.child_exit_code = root_exit_code_;
  result.events_written = events_.size();
  result.output_path = config_.output_path;
  if (!config_.output_path.empty()) {
    std::ofstream out(config_.output_path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw RunError("cannot open output file '" + config_.output_path + "'");
    }
    out << serialize_events(events_);
  }
  result.events = std::move(events_);
  return result;
}

}  // namespace

void LiveSessionConfig::validate() const {
  if (command.empty()) {
    throw InputError("live session: command must be non-empty");
  }
  if (!enable_sampling && !enable_sched && !enable_lifecycle) {
    throw InputError("live session: at least one of sampling/sched/lifecycle must be enabled");
  }
  if (enable_sampling && (!sample_period_ns || *sample_period_ns == 0)) {
    throw InputError("live session: sampling requires sample_period_ns > 0");
  }
}

CapabilityReport capability_probe() {
  CapabilityReport report;
  if (force_no_live()) {
    report.reasons.push_back("TRACEHOUND_FORCE_NO_LIVE=1 set; live tracing disabled");
    return report;
  }
  std::string reason;
  report.lifecycle_ok = probe_ptrace(reason);
  if (!report.lifecycle_ok) report.reasons.push_back("lifecycle unavailable: " + reason);
  report.sampling_ok = probe_perf(sampler_attr(1'000'000), reason, "sampling");
  if (!report.sampling_ok) report.reasons.push_back(reason);
  report.sched_ok = probe_perf(sched_attr(), reason, "sched");
  if (!report.sched_ok) report.reasons.push_back(reason);
  report.tracing_available = report.lifecycle_ok && report.sampling_ok && report.sched_ok;
  return report;
}

SessionResult record(const LiveSessionConfig& config) {
  config.validate();
  const CapabilityReport caps = capability_probe();
  std::vector<std::string> missing;
  if (config.enable_lifecycle && !caps.lifecycle_ok) missing.push_back("lifecycle");
  if (config.enable_sampling && !caps.sampling_ok) missing.push_back("sampling");
  if (config.enable_sched && !caps.sched_ok) missing.push_back("sched");
  // Sampling/sched also hold the child via the lifecycle mechanism before
  // attach, so it must be present for any session.
  if (!caps.lifecycle_ok && missing.empty()) missing.push_back("lifecycle");
  if (!missing.empty()) {
    std::string what = "capability denied:";
    for (const std::string& m : missing) what += " " + m;
    for (const std::string& r : caps.reasons) what += "; " + r;
    throw LiveError(LiveError::Code::capability_denied, missing.front(), what);
  }
  Session session(config);
  return session.run();
}

std::string to_string(AttachMode mode) {
  switch (mode) {
    case AttachMode::uprobes: return "uprobes";
    case AttachMode::usdt: return "usdt";
    case AttachMode::tracepoints: return "tracepoints";
  }
  return "?";
}

std::optional<AttachMode> attach_mode_from_string(const std::string& text) {
  if (text == "uprobes") return AttachMode::uprobes;
  if (text == "usdt") return AttachMode::usdt;
  if (text == "tracepoints") return AttachMode::tracepoints;
  return std::nullopt;
}

}  // namespace tracehound
