#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <sys/types.h>
#include <vector>

#include "gcdk/denoiser.hpp"

namespace gcdk {

/// Transport failure talking to an external denoiser: spawn failure,
/// handshake timeout or mismatch, malformed or missing responses.
class BridgeError : public DenoiserError {
 public:
  using DenoiserError::DenoiserError;
};

struct BridgeOptions {
  std::vector<int> versions{1};
  std::chrono::milliseconds handshake_timeout{5000};
  std::chrono::milliseconds response_timeout{120000};
};

/// Line-oriented child-process channel. Both directions share one socket
/// attached to the child's stdin and stdout; stderr is inherited.
class ChildChannel {
 public:
  /// Runs `command` through /bin/sh -c.
  explicit ChildChannel(const std::string& command);
  ~ChildChannel();
  ChildChannel(const ChildChannel&) = delete;
  ChildChannel& operator=(const ChildChannel&) = delete;

  void send_line(const std::string& line);
  /// Throws BridgeError on timeout or end of stream.
  std::string read_line(std::chrono::milliseconds timeout);
  /// Closes the channel and reaps the child, killing it if it lingers.
  void close();

 private:
  int fd_ = -1;
  pid_t pid_ = -1;
  std::string buffer_;
};

/// Densifies one wire distribution: listed (token, prob) pairs, plus
/// `rest_mass` spread evenly over every unlisted outcome. Values are kept
/// bit-for-bit when they already sum to 1 within 1e-9, otherwise
/// renormalized. Throws BridgeError unless listed + rest = 1 +- 1e-6.
Distribution densify(const Vocabulary& vocab, const std::vector<std::pair<std::string, double>>& top,
                     double rest_mass);

/// Denoiser served by an external process speaking wire protocol v1:
///   -> {"type":"hello","versions":[1]}
///   <- {"type":"ready","version":1}
///   -> {"type":"forward","id":..,"prompt":[..],"slots":[..],"masked":[..],"temperature":..,"seed":..}
///   <- {"type":"dist","id":..,"positions":{"<idx>":{"top":[["tok",p],..],"rest_mass":r}}}
///   -> {"type":"bye"}
/// Tokens cross as strings; slots are token strings, "MASK" or "EOS".
/// Concurrent forward calls are serialized over the single channel.
class BridgeDenoiser final : public Denoiser {
 public:
  BridgeDenoiser(const std::string& command, std::shared_ptr<const Vocabulary> vocab, BridgeOptions options = {});
  ~BridgeDenoiser() override;

  std::string name() const override { return "bridge"; }
  std::size_t outcome_count() const override { return vocab_->outcome_count(); }
  int version() const { return version_; }
  /// Sends the shutdown message and reaps the child. Idempotent.
  void shutdown();

 protected:
  DistributionSet predict(const ForwardRequest& request) const override;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  BridgeOptions options_;
  mutable std::mutex mu_;
  mutable std::unique_ptr<ChildChannel> channel_;
  mutable std::uint64_t next_id_ = 1;
  int version_ = 0;
};

}  // namespace gcdk
