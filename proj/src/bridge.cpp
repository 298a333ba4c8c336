#include "gcdk/bridge.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace gcdk {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kEosWire = "EOS";
constexpr const char* kMaskWire = "MASK";

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

ChildChannel::ChildChannel(const std::string& command) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) throw BridgeError(errno_text("socketpair"));
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw BridgeError(errno_text("fork"));
  }
  if (pid == 0) {
    // dup2 clears close-on-exec on the duplicates.
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  fd_ = fds[0];
  pid_ = pid;
}

ChildChannel::~ChildChannel() { close(); }

void ChildChannel::send_line(const std::string& line) {
  if (fd_ < 0) throw BridgeError("bridge channel is closed");
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(errno_text("bridge write failed"));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string ChildChannel::read_line(std::chrono::milliseconds timeout) {
  if (fd_ < 0) throw BridgeError("bridge channel is closed");
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw BridgeError("bridge timed out after " + std::to_string(timeout.count()) + " ms");
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(errno_text("poll"));
    }
    if (rc == 0) continue;
    char chunk[4096];
    ssize_t n = ::read(fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(errno_text("bridge read failed"));
    }
    if (n == 0) throw BridgeError("bridge process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ChildChannel::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_ || r < 0) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

Distribution densify(const Vocabulary& vocab, const std::vector<std::pair<std::string, double>>& top,
                     double rest_mass) {
  const std::size_t n = vocab.outcome_count();
  std::vector<double> dense(n, 0.0);
  std::vector<bool> listed(n, false);
  double listed_mass = 0.0;
  for (const auto& [tok, p] : top) {
    std::size_t idx;
    if (tok == kEosWire) {
      idx = n - 1;
    } else if (auto id = vocab.find(tok)) {
      idx = static_cast<std::size_t>(*id);
    } else {
      throw BridgeError("bridge sent unknown token '" + tok + "'");
    }
    if (listed[idx]) throw BridgeError("bridge listed token '" + tok + "' twice");
    if (!(p >= 0.0) || !std::isfinite(p)) throw BridgeError("bridge sent invalid probability for '" + tok + "'");
    listed[idx] = true;
    dense[idx] = p;
    listed_mass += p;
  }
  if (!(rest_mass >= 0.0) || !std::isfinite(rest_mass)) throw BridgeError("bridge sent invalid rest_mass");
  if (std::abs(listed_mass + rest_mass - 1.0) > 1e-6) {
    throw BridgeError("bridge distribution sums to " + std::to_string(listed_mass + rest_mass));
  }
  std::size_t unlisted = 0;
  for (bool b : listed) unlisted += b ? 0 : 1;
  if (unlisted > 0) {
    double share = rest_mass / static_cast<double>(unlisted);
    for (std::size_t i = 0; i < n; ++i) {
      if (!listed[i]) dense[i] = share;
    }
  }
  double total = 0.0;
  for (double p : dense) total += p;
  if (total <= 0.0) throw BridgeError("bridge distribution has no mass");
  if (std::abs(total - 1.0) <= 1e-9) return Distribution::exact(std::move(dense));
  return Distribution::from_dense(std::move(dense));
}

BridgeDenoiser::BridgeDenoiser(const std::string& command, std::shared_ptr<const Vocabulary> vocab,
                               BridgeOptions options)
    : vocab_(std::move(vocab)), options_(std::move(options)) {
  if (!vocab_) throw std::invalid_argument("bridge needs a vocabulary");
  if (vocab_->find(kEosWire) || vocab_->find(kMaskWire)) {
    throw BridgeError("vocabulary tokens 'EOS' and 'MASK' are reserved on the bridge wire");
  }
  if (options_.versions.empty()) throw std::invalid_argument("bridge needs at least one protocol version");

  channel_ = std::make_unique<ChildChannel>(command);
  json hello = {{"type", "hello"}, {"versions", options_.versions}};
  try {
    channel_->send_line(hello.dump());
    auto line = channel_->read_line(options_.handshake_timeout);
    json reply = json::parse(line, nullptr, false);
    if (reply.is_discarded() || !reply.is_object()) throw BridgeError("malformed handshake reply: " + line);
    auto type = reply.value("type", std::string{});
    if (type == "error") throw BridgeError("bridge refused handshake: " + reply.value("message", std::string{}));
    if (type != "ready" || !reply.contains("version") || !reply["version"].is_number_integer()) {
      throw BridgeError("malformed handshake reply: " + line);
    }
    int v = reply["version"].get<int>();
    if (std::find(options_.versions.begin(), options_.versions.end(), v) == options_.versions.end()) {
      throw BridgeError("version mismatch: bridge chose unsupported version " + std::to_string(v));
    }
    version_ = v;
  } catch (...) {
    channel_->close();
    throw;
  }
}

BridgeDenoiser::~BridgeDenoiser() {
  try {
    shutdown();
  } catch (...) {
  }
}

void BridgeDenoiser::shutdown() {
  std::lock_guard lock(mu_);
  if (!channel_) return;
  try {
    channel_->send_line(json{{"type", "bye"}}.dump());
  } catch (const BridgeError&) {
  }
  channel_->close();
  channel_.reset();
}

DistributionSet BridgeDenoiser::predict(const ForwardRequest& request) const {
  const auto& state = *request.state;
  json prompt = json::array();
  for (TokenId t : state.prompt) prompt.push_back(vocab_->token(t));
  json slots = json::array();
  for (const auto& s : state.output) {
    if (s.is_mask()) {
      slots.push_back(kMaskWire);
    } else if (s.is_eos()) {
      slots.push_back(kEosWire);
    } else {
      slots.push_back(vocab_->token(s.value));
    }
  }

  std::lock_guard lock(mu_);
  if (!channel_) throw BridgeError("bridge is shut down");
  const std::uint64_t id = next_id_++;
  json msg = {{"type", "forward"},          {"id", id},
              {"prompt", std::move(prompt)}, {"slots", std::move(slots)},
              {"masked", request.positions}, {"temperature", request.temperature},
              {"seed", request.seed}};
  channel_->send_line(msg.dump());
  auto line = channel_->read_line(options_.response_timeout);

  json reply = json::parse(line, nullptr, false);
  if (reply.is_discarded() || !reply.is_object()) throw BridgeError("malformed bridge response: " + line);
  auto type = reply.value("type", std::string{});
  if (type == "error") throw BridgeError("bridge error: " + reply.value("message", std::string{}));
  if (type != "dist") throw BridgeError("unexpected bridge message type '" + type + "'");
  if (!reply.contains("id") || !reply["id"].is_number_unsigned() || reply["id"].get<std::uint64_t>() != id) {
    throw BridgeError("bridge response id does not match request " + std::to_string(id));
  }
  const auto it = reply.find("positions");
  if (it == reply.end() || !it->is_object()) throw BridgeError("bridge response has no positions object");
  if (it->size() != request.positions.size()) throw BridgeError("bridge response covers the wrong positions");

  DistributionSet out;
  for (std::size_t pos : request.positions) {
    auto entry = it->find(std::to_string(pos));
    if (entry == it->end()) throw BridgeError("bridge response is missing position " + std::to_string(pos));
    try {
      std::vector<std::pair<std::string, double>> top;
      for (const auto& pair : entry->at("top")) {
        if (!pair.is_array() || pair.size() != 2) throw BridgeError("top entries must be [token, prob] pairs");
        top.emplace_back(pair[0].get<std::string>(), pair[1].get<double>());
      }
      out.emplace(pos, densify(*vocab_, top, entry->at("rest_mass").get<double>()));
    } catch (const json::exception& e) {
      throw BridgeError("malformed distribution for position " + std::to_string(pos) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace gcdk
