#pragma once

#include <memory>
#include <string>

#include "qsc/bytes.hpp"
#include "qsc/core_types.hpp"
#include "qsc/message_set.hpp"

namespace qsc {

enum class MsgKind : std::uint8_t { plain = 0, req = 1, ack = 2, wit = 3 };

inline const char* kind_name(MsgKind k) {
  switch (k) {
    case MsgKind::plain: return "plain";
    case MsgKind::req: return "req";
    case MsgKind::ack: return "ack";
    case MsgKind::wit: return "wit";
  }
  return "?";
}

using SetPtr = std::shared_ptr<const MessageSet>;

// One TLC wire message. For acks the payload is the acknowledged request's
// subject message; the prior sets are the sender's logs for step - 1.
struct StepMessage {
  MsgKind kind = MsgKind::plain;
  NodeId sender;
  Step step = 0;
  Blob payload;
  SetPtr prior_r;  // absent in defer-future mode
  SetPtr prior_b;  // present only when the sender's B-log entry is nonempty

  // kind u8 || sender u32 || step u64 || u32 len || payload || flags u8
  // || [prior R set] || [prior B set]
  std::size_t encoded_size() const {
    std::size_t n = 1 + 4 + 8 + 4 + payload.size() + 1;
    if (prior_r) n += prior_r->encoded_size();
    if (prior_b) n += prior_b->encoded_size();
    return n;
  }

  Bytes encode() const {
    ByteWriter w(encoded_size());
    w.u8(static_cast<std::uint8_t>(kind));
    w.u32(sender.value);
    w.u64(step);
    w.blob(payload.bytes());
    w.u8(static_cast<std::uint8_t>((prior_r ? 1 : 0) | (prior_b ? 2 : 0)));
    if (prior_r) prior_r->encode_to(w);
    if (prior_b) prior_b->encode_to(w);
    return std::move(w).take();
  }

  static StepMessage decode(ByteSpan bytes) {
    ByteReader r(bytes);
    StepMessage m;
    auto k = r.u8();
    if (k > 3) throw DecodeError("unknown message kind " + std::to_string(k));
    m.kind = static_cast<MsgKind>(k);
    m.sender.value = r.u32();
    m.step = r.u64();
    auto p = r.blob();
    m.payload = Blob(Bytes(p.begin(), p.end()));
    auto flags = r.u8();
    if (flags & ~3u) throw DecodeError("unknown message flags");
    if (flags & 1) m.prior_r = std::make_shared<const MessageSet>(MessageSet::decode_from(r));
    if (flags & 2) m.prior_b = std::make_shared<const MessageSet>(MessageSet::decode_from(r));
    r.expect_done();
    return m;
  }
};

using MsgPtr = std::shared_ptr<const StepMessage>;

}  // namespace qsc
