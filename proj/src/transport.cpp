#include "fedsilo/transport.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace fedsilo::transport {

using fedsilo::Error;
using fedsilo::ErrorCode;
using fedsilo::require;
using model::BlockInfo;

static_assert(std::endian::native == std::endian::little,
              "wire format assumes a little-endian host");

void RoundMessage::validate() const {
  if (kind == MessageKind::kGlobalModel) {
    require(!client_id.has_value(), ErrorCode::kMalformedMessage,
            "GlobalModel must not carry a client id");
  } else {
    require(client_id.has_value(), ErrorCode::kMalformedMessage,
            "LocalUpdate must carry a client id");
    require(*client_id != kNoClient, ErrorCode::kMalformedMessage,
            "LocalUpdate client id is reserved");
  }
}

namespace {

constexpr char kMagic[4] = {'F', 'L', 'A', 'M'};
constexpr std::size_t kHeaderSize = 4 + 2 + 1 + 4 + 4 + 4;  // magic..client slot

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T take() {
    require(pos_ + sizeof(T) <= bytes_.size(), ErrorCode::kTruncated,
            "message ends inside a fixed-width field");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take_string(std::size_t len) {
    require(pos_ + len <= bytes_.size(), ErrorCode::kTruncated, "message ends inside a name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> serialize(const RoundMessage& msg) {
  msg.validate();
  std::vector<std::uint8_t> out;
  out.reserve(serialized_size(msg.params));
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint16_t>(out, kWireVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(msg.kind));
  put<std::uint32_t>(out, msg.epoch);
  put<std::uint32_t>(out, msg.round);
  put<std::uint32_t>(out, msg.client_id.value_or(kNoClient));

  put<std::uint32_t>(out, static_cast<std::uint32_t>(msg.params.manifest().size()));
  for (const BlockInfo& b : msg.params.manifest()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.rows));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.cols));
  }
  for (double v : msg.params.data()) put<double>(out, v);
  put<std::uint32_t>(out, crc_of(out));
  return out;
}

RoundMessage deserialize(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 4, ErrorCode::kTruncated, "shorter than magic");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::kBadMagic,
          "expected FLAM magic bytes");
  require(bytes.size() >= kHeaderSize + 4 + 4, ErrorCode::kTruncated, "shorter than header");

  const std::span<const std::uint8_t> body = bytes.first(bytes.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  require(crc_of(body) == stored_crc, ErrorCode::kBadCrc, "checksum does not match content");

  Reader reader(body);
  reader.take_string(4);  // magic, already checked
  const auto version = reader.take<std::uint16_t>();
  require(version == kWireVersion, ErrorCode::kBadVersion,
          "wire version " + std::to_string(version));
  const auto kind_raw = reader.take<std::uint8_t>();
  require(kind_raw <= 1, ErrorCode::kMalformedMessage, "unknown message kind");
  RoundMessage msg;
  msg.kind = static_cast<MessageKind>(kind_raw);
  msg.epoch = reader.take<std::uint32_t>();
  msg.round = reader.take<std::uint32_t>();
  const auto client_slot = reader.take<std::uint32_t>();
  if (msg.kind == MessageKind::kGlobalModel) {
    require(client_slot == kNoClient, ErrorCode::kMalformedMessage,
            "GlobalModel carries a client id");
  } else {
    require(client_slot != kNoClient, ErrorCode::kMalformedMessage,
            "LocalUpdate missing a client id");
    msg.client_id = client_slot;
  }

  const auto block_count = reader.take<std::uint32_t>();
  std::vector<BlockInfo> manifest;
  manifest.reserve(block_count);
  for (std::uint32_t i = 0; i < block_count; ++i) {
    const auto name_len = reader.take<std::uint32_t>();
    BlockInfo info;
    info.name = reader.take_string(name_len);
    info.rows = reader.take<std::uint32_t>();
    info.cols = reader.take<std::uint32_t>();
    manifest.push_back(std::move(info));
  }
  ParamVector params{std::move(manifest)};
  for (double& v : params.data()) v = reader.take<double>();
  require(reader.pos() == body.size(), ErrorCode::kMalformedMessage,
          "trailing bytes after data block");
  msg.params = std::move(params);
  msg.validate();
  return msg;
}

std::size_t serialized_size(const ParamVector& params) {
  std::size_t size = kHeaderSize + 4;  // fixed header + manifest count
  for (const BlockInfo& b : params.manifest()) size += 4 + b.name.size() + 4 + 4;
  size += 8 * params.size();
  return size + 4;  // CRC
}

void save_checkpoint(const RoundMessage& msg, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize(msg);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::kIo, "write failed for " + path);
}

RoundMessage load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

ParamVector with_transform_blocks(const ParamVector& params,
                                  const std::vector<transform::AffineTransform>& transforms) {
  std::vector<BlockInfo> manifest = params.manifest();
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    const std::size_t d = transforms[i].dim();
    const std::string base = "client" + std::to_string(i);
    manifest.push_back({base + ".A", d, d, 0});
    manifest.push_back({base + ".b", d, 1, 0});
  }
  ParamVector out{std::move(manifest)};
  std::copy(params.data().begin(), params.data().end(), out.data().begin());
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    const std::string base = "client" + std::to_string(i);
    out.set_block(base + ".A", transforms[i].A);
    out.set_block(base + ".b",
                  numkit::Matrix(transforms[i].dim(), 1, transforms[i].b));
  }
  return out;
}

std::pair<ParamVector, std::vector<transform::AffineTransform>> split_transform_blocks(
    const ParamVector& params) {
  std::vector<BlockInfo> model_manifest;
  std::size_t num_transforms = 0;
  for (const BlockInfo& b : params.manifest()) {
    if (b.name.rfind("client", 0) == 0) {
      if (b.name.size() > 2 && b.name.substr(b.name.size() - 2) == ".A") ++num_transforms;
    } else {
      model_manifest.push_back(b);
    }
  }
  ParamVector model_params{std::move(model_manifest)};
  for (std::size_t i = 0; i < model_params.manifest().size(); ++i) {
    const auto src = params.block(model_params.manifest()[i].name);
    auto dst = model_params.block(i);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  std::vector<transform::AffineTransform> transforms;
  transforms.reserve(num_transforms);
  for (std::size_t i = 0; i < num_transforms; ++i) {
    const std::string base = "client" + std::to_string(i);
    require(params.has_block(base + ".A") && params.has_block(base + ".b"),
            ErrorCode::kMalformedMessage, "checkpoint transform blocks not contiguous");
    const numkit::Matrix a = params.block_matrix(base + ".A");
    const numkit::Matrix b = params.block_matrix(base + ".b");
    transforms.push_back({a, numkit::Vector(b.data().begin(), b.data().end())});
  }
  return {std::move(model_params), std::move(transforms)};
}

SyncRoundChannel::SyncRoundChannel(int num_clients, std::chrono::milliseconds timeout)
    : num_clients_(num_clients), timeout_(timeout), inbox_(static_cast<std::size_t>(num_clients)) {
  require(num_clients >= 1, ErrorCode::kInvalidArgument, "channel needs at least one client");
}

void SyncRoundChannel::broadcast(const RoundMessage& global) {
  require(global.kind == MessageKind::kGlobalModel, ErrorCode::kProtocol,
          "broadcast expects a GlobalModel message");
  const std::vector<std::uint8_t> bytes = serialize(global);
  std::lock_guard<std::mutex> lock(mutex_);
  require(!round_open_, ErrorCode::kProtocol, "previous round not collected");
  current_epoch_ = global.epoch;
  current_round_ = global.round;
  round_open_ = true;
  updates_.clear();
  update_seen_.assign(static_cast<std::size_t>(num_clients_), false);
  failure_.reset();
  for (auto& queue : inbox_) queue.push_back(bytes);
  bytes_down_ += static_cast<std::uint64_t>(bytes.size()) * static_cast<std::uint64_t>(num_clients_);
  cv_.notify_all();
}

RoundMessage SyncRoundChannel::await_global(int client_id) {
  std::unique_lock<std::mutex> lock(mutex_);
  auto& queue = inbox_.at(static_cast<std::size_t>(client_id));
  if (!cv_.wait_for(lock, timeout_, [&] { return !queue.empty(); })) {
    throw Error(ErrorCode::kTimeout, "client " + std::to_string(client_id) +
                                         " saw no broadcast within the timeout");
  }
  const std::vector<std::uint8_t> bytes = std::move(queue.front());
  queue.pop_front();
  lock.unlock();
  return deserialize(bytes);
}

void SyncRoundChannel::submit(const RoundMessage& update) {
  update.validate();
  require(update.kind == MessageKind::kLocalUpdate, ErrorCode::kProtocol,
          "submit expects a LocalUpdate message");
  std::vector<std::uint8_t> bytes = serialize(update);
  std::lock_guard<std::mutex> lock(mutex_);
  require(round_open_, ErrorCode::kProtocol, "no open round");
  require(update.epoch == current_epoch_ && update.round == current_round_, ErrorCode::kProtocol,
          "update for a different round");
  const auto id = *update.client_id;
  require(id < static_cast<std::uint32_t>(num_clients_), ErrorCode::kProtocol,
          "unknown client id " + std::to_string(id));
  require(!update_seen_[id], ErrorCode::kProtocol,
          "duplicate update from client " + std::to_string(id) + " in round " +
              std::to_string(current_round_));
  update_seen_[id] = true;
  bytes_up_ += bytes.size();
  updates_.push_back(std::move(bytes));
  cv_.notify_all();
}

void SyncRoundChannel::submit_failure(int client_id, const std::string& reason) {
  std::lock_guard<std::mutex> lock(mutex_);
  failure_ = "client " + std::to_string(client_id) + ": " + reason;
  cv_.notify_all();
}

std::vector<RoundMessage> SyncRoundChannel::collect() {
  std::unique_lock<std::mutex> lock(mutex_);
  require(round_open_, ErrorCode::kProtocol, "collect without a broadcast");
  const bool complete = cv_.wait_for(lock, timeout_, [&] {
    return failure_.has_value() || updates_.size() == static_cast<std::size_t>(num_clients_);
  });
  if (failure_.has_value()) {
    const std::string reason = *failure_;
    round_open_ = false;
    throw Error(ErrorCode::kClientFailure, reason);
  }
  if (!complete) {
    round_open_ = false;
    throw Error(ErrorCode::kTimeout,
                "round " + std::to_string(current_round_) + ": only " +
                    std::to_string(updates_.size()) + "/" + std::to_string(num_clients_) +
                    " updates arrived");
  }
  round_open_ = false;
  std::vector<std::vector<std::uint8_t>> raw = std::move(updates_);
  updates_.clear();
  lock.unlock();

  std::vector<RoundMessage> messages;
  messages.reserve(raw.size());
  for (const auto& bytes : raw) messages.push_back(deserialize(bytes));
  std::sort(messages.begin(), messages.end(),
            [](const RoundMessage& a, const RoundMessage& b) { return *a.client_id < *b.client_id; });
  return messages;
}

}  // namespace fedsilo::transport
