#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsilo/model.hpp"
#include "fedsilo/transform.hpp"

namespace fedsilo::transport {

using model::ParamVector;

enum class MessageKind : std::uint8_t {
  kGlobalModel = 0,
  kLocalUpdate = 1,
};

/// The only payload ever exchanged between server and clients: a parameter
/// vector plus routing fields. There is no field that could carry features
/// or labels.
struct RoundMessage {
  MessageKind kind = MessageKind::kGlobalModel;
  std::uint32_t epoch = 0;
  std::uint32_t round = 0;
  std::optional<std::uint32_t> client_id;  // LocalUpdate only
  ParamVector params;

  void validate() const;
  bool operator==(const RoundMessage& other) const = default;
};

// Wire format: "FLAM" magic, u16 version, u8 kind, u32 epoch, u32 round,
// u32 client slot (0xFFFFFFFF on GlobalModel), manifest block (u32 count;
// per entry u32 name length, name bytes, u32 rows, u32 cols), data block
// (little-endian IEEE-754 f64 in manifest order), trailing CRC-32 of all
// preceding bytes. Both message kinds of the same model serialize to the
// same length, so byte accounting has a closed form.
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::uint32_t kNoClient = 0xFFFFFFFFu;

std::vector<std::uint8_t> serialize(const RoundMessage& msg);
RoundMessage deserialize(std::span<const std::uint8_t> bytes);

/// Closed-form serialized size for a message carrying this manifest.
std::size_t serialized_size(const ParamVector& params);

void save_checkpoint(const RoundMessage& msg, const std::string& path);
RoundMessage load_checkpoint(const std::string& path);

/// Append per-client transform blocks ("client{i}.A", "client{i}.b") to a
/// model parameter vector for checkpointing.
ParamVector with_transform_blocks(const ParamVector& params,
                                  const std::vector<transform::AffineTransform>& transforms);

/// Split a checkpoint parameter vector back into model blocks and any
/// transform blocks it carries.
std::pair<ParamVector, std::vector<transform::AffineTransform>> split_transform_blocks(
    const ParamVector& params);

/// In-process synchronous exchange for one federation: the server broadcasts
/// a GlobalModel to every client, clients each submit exactly one LocalUpdate
/// per round, and `collect` blocks until all of them are in. Messages cross
/// as serialized bytes, so byte accounting reflects real payload sizes.
class SyncRoundChannel {
 public:
  SyncRoundChannel(int num_clients, std::chrono::milliseconds timeout);

  // server side
  void broadcast(const RoundMessage& global);
  std::vector<RoundMessage> collect();  // sorted by client id

  // client side
  RoundMessage await_global(int client_id);
  void submit(const RoundMessage& update);
  void submit_failure(int client_id, const std::string& reason);

  std::uint64_t bytes_down() const { return bytes_down_; }
  std::uint64_t bytes_up() const { return bytes_up_; }

 private:
  int num_clients_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::uint32_t current_round_ = 0;
  std::uint32_t current_epoch_ = 0;
  bool round_open_ = false;
  std::vector<std::deque<std::vector<std::uint8_t>>> inbox_;  // per client
  std::vector<std::vector<std::uint8_t>> updates_;
  std::vector<bool> update_seen_;
  std::optional<std::string> failure_;
  std::uint64_t bytes_down_ = 0;
  std::uint64_t bytes_up_ = 0;
};

}  // namespace fedsilo::transport
