#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "qsc/bytes.hpp"
#include "qsc/core_types.hpp"
#include "qsc/digest.hpp"

namespace qsc {

// Immutable shared payload with its SHA-256 computed once at creation.
class Blob {
 public:
  Blob() : Blob(Bytes{}) {}
  explicit Blob(Bytes bytes) : data_(std::make_shared<const Bytes>(std::move(bytes))), digest_(Digest::of(*data_)) {}

  const Bytes& bytes() const { return *data_; }
  std::size_t size() const { return data_->size(); }
  const Digest& digest() const { return digest_; }

  friend bool operator==(const Blob& a, const Blob& b) { return a.digest_ == b.digest_; }

 private:
  std::shared_ptr<const Bytes> data_;
  Digest digest_{};
};

struct MessageEntry {
  NodeId sender;
  Blob message;

  friend bool operator==(const MessageEntry&, const MessageEntry&) = default;
};

// Set of <sender, message> pairs sent in one time-step. A correct node
// sends one message per step, so entries are unique by sender and the
// number of distinct senders is simply size().
class MessageSet {
 public:
  using const_iterator = std::vector<MessageEntry>::const_iterator;

  // Returns false if the sender was already present. A different message
  // from the same sender in the same step is a protocol violation.
  bool insert(NodeId sender, const Blob& message) {
    auto it = lower(sender);
    if (it != entries_.end() && it->sender == sender) {
      if (!(it->message == message))
        throw ProtocolViolation("two different messages from node " + std::to_string(sender.value) +
                                " in one step");
      return false;
    }
    entries_.insert(it, MessageEntry{sender, message});
    return true;
  }

  void merge(const MessageSet& other) {
    for (const auto& e : other.entries_) insert(e.sender, e.message);
  }

  bool contains(const MessageEntry& e) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), e.sender,
                               [](const MessageEntry& x, NodeId s) { return x.sender < s; });
    return it != entries_.end() && it->sender == e.sender && it->message == e.message;
  }

  const Blob* find(NodeId sender) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), sender,
                               [](const MessageEntry& x, NodeId s) { return x.sender < s; });
    return (it != entries_.end() && it->sender == sender) ? &it->message : nullptr;
  }

  bool subset_of(const MessageSet& other) const {
    return std::all_of(entries_.begin(), entries_.end(), [&](const MessageEntry& e) { return other.contains(e); });
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const_iterator begin() const { return entries_.begin(); }
  const_iterator end() const { return entries_.end(); }

  // Prior-set wire format: u32 count, then per entry
  // sender u32 || payload digest (32) || u32 length || payload.
  void encode_to(ByteWriter& w) const {
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      w.u32(e.sender.value);
      w.raw(e.message.digest().bytes);
      w.blob(e.message.bytes());
    }
  }

  std::size_t encoded_size() const {
    std::size_t n = 4;
    for (const auto& e : entries_) n += 4 + 32 + 4 + e.message.size();
    return n;
  }

  Bytes encode() const {
    ByteWriter w(encoded_size());
    encode_to(w);
    return std::move(w).take();
  }

  static MessageSet decode_from(ByteReader& r) {
    MessageSet s;
    auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      NodeId sender{r.u32()};
      Digest d;
      auto dig = r.raw(32);
      std::copy(dig.begin(), dig.end(), d.bytes.begin());
      auto payload = r.blob();
      Blob b(Bytes(payload.begin(), payload.end()));
      if (b.digest() != d) throw DecodeError("payload digest mismatch for sender " + std::to_string(sender.value));
      s.insert(sender, b);
    }
    return s;
  }

  static MessageSet decode(ByteSpan bytes) {
    ByteReader r(bytes);
    auto s = decode_from(r);
    r.expect_done();
    return s;
  }

  friend bool operator==(const MessageSet&, const MessageSet&) = default;

 private:
  std::vector<MessageEntry>::iterator lower(NodeId s) {
    return std::lower_bound(entries_.begin(), entries_.end(), s,
                            [](const MessageEntry& x, NodeId id) { return x.sender < id; });
  }

  std::vector<MessageEntry> entries_;
};

}  // namespace qsc
