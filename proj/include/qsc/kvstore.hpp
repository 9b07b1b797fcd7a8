#pragma once

// Write-once key-value stores: in-memory, file-backed, and a line-protocol
// TCP service with its client.

#include <fcntl.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <boost/asio.hpp>
#include <cerrno>
#include <compare>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "qsc/bytes.hpp"
#include "qsc/errors.hpp"

namespace qsc {

struct Key {
  std::uint64_t round = 0;
  std::uint32_t slot = 1;  // 1..4

  auto operator<=>(const Key&) const = default;
  std::string str() const { return "<" + std::to_string(round) + "," + std::to_string(slot) + ">"; }
};

inline void check_key(const Key& k) {
  if (k.slot < 1 || k.slot > 4) throw UsageError("key slot must be 1..4, got " + std::to_string(k.slot));
}

class Store {
 public:
  virtual ~Store() = default;
  // Sets the value if the key is unset; silently does nothing otherwise.
  virtual void write_once(const Key& k, ByteSpan v) = 0;
  virtual std::optional<Bytes> read(const Key& k) = 0;
  // Write then read back in one round trip where the backend allows it.
  virtual Bytes write_read(const Key& k, ByteSpan v) {
    write_once(k, v);
    auto got = read(k);
    if (!got) throw StoreIoError("value vanished after write at " + k.str());
    return *got;
  }
};

class MemoryStore final : public Store {
 public:
  void write_once(const Key& k, ByteSpan v) override {
    check_key(k);
    std::lock_guard lock(mu_);
    data_.try_emplace(k, v.begin(), v.end());
  }
  std::optional<Bytes> read(const Key& k) override {
    check_key(k);
    std::lock_guard lock(mu_);
    auto it = data_.find(k);
    if (it == data_.end()) return std::nullopt;
    return it->second;
  }
  Bytes write_read(const Key& k, ByteSpan v) override {
    check_key(k);
    std::lock_guard lock(mu_);
    return data_.try_emplace(k, v.begin(), v.end()).first->second;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return data_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<Key, Bytes> data_;
};

// One file per key. A write goes to a private temp file which is then
// hard-linked to the key's name; link() failing with EEXIST is a lost race.
class FileStore final : public Store {
 public:
  explicit FileStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw StoreIoError("cannot create store directory " + dir_.string() + ": " + ec.message());
  }

  // Directory from QSC_STORE_DIR, or the fallback.
  static std::filesystem::path env_dir(const std::filesystem::path& fallback = "qsc-store") {
    const char* d = std::getenv("QSC_STORE_DIR");
    return d && *d ? std::filesystem::path(d) : fallback;
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_of(const Key& k) const {
    return dir_ / ("k" + std::to_string(k.round) + "_" + std::to_string(k.slot));
  }

  void write_once(const Key& k, ByteSpan v) override {
    check_key(k);
    const auto target = path_of(k);
    if (::access(target.c_str(), F_OK) == 0) return;
    std::string tmpl = (dir_ / ".tmp-XXXXXX").string();
    int fd = ::mkstemp(tmpl.data());
    if (fd < 0) throw StoreIoError("mkstemp in " + dir_.string() + ": " + std::strerror(errno));
    auto cleanup = [&] { ::unlink(tmpl.c_str()); };
    std::size_t off = 0;
    while (off < v.size()) {
      auto w = ::write(fd, v.data() + off, v.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        int e = errno;
        ::close(fd);
        cleanup();
        throw StoreIoError("write " + tmpl + ": " + std::strerror(e));
      }
      off += static_cast<std::size_t>(w);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
      int e = errno;
      cleanup();
      throw StoreIoError("flush " + tmpl + ": " + std::strerror(e));
    }
    int rc = ::link(tmpl.c_str(), target.c_str());
    int e = errno;
    cleanup();
    if (rc != 0 && e != EEXIST) throw StoreIoError("link " + target.string() + ": " + std::strerror(e));
  }

  std::optional<Bytes> read(const Key& k) override {
    check_key(k);
    const auto target = path_of(k);
    int fd = ::open(target.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) {
      if (errno == ENOENT) return std::nullopt;
      throw StoreIoError("open " + target.string() + ": " + std::strerror(errno));
    }
    Bytes out;
    std::uint8_t buf[4096];
    for (;;) {
      auto r = ::read(fd, buf, sizeof buf);
      if (r < 0) {
        if (errno == EINTR) continue;
        int e = errno;
        ::close(fd);
        throw StoreIoError("read " + target.string() + ": " + std::strerror(e));
      }
      if (r == 0) break;
      out.insert(out.end(), buf, buf + r);
    }
    ::close(fd);
    return out;
  }

 private:
  std::filesystem::path dir_;
};

// ---- line protocol ----
//   W <q> <slot> <b64>   -> OK
//   R <q> <slot>         -> V <b64> | NONE
//   WR <q> <slot> <b64>  -> V <b64>
// Any failure answers ERR <text>.

namespace wire {

inline std::string write_req(const Key& k, ByteSpan v) {
  return "W " + std::to_string(k.round) + " " + std::to_string(k.slot) + " " + base64_encode(v);
}
inline std::string read_req(const Key& k) { return "R " + std::to_string(k.round) + " " + std::to_string(k.slot); }
inline std::string write_read_req(const Key& k, ByteSpan v) {
  return "WR " + std::to_string(k.round) + " " + std::to_string(k.slot) + " " + base64_encode(v);
}
inline std::string value_resp(const std::optional<Bytes>& v) { return v ? "V " + base64_encode(*v) : "NONE"; }

struct Request {
  std::string verb;
  Key key;
  Bytes value;
};

inline Request parse_request(const std::string& line) {
  std::istringstream in(line);
  Request r;
  std::string q, slot, b64, extra;
  if (!(in >> r.verb >> q >> slot)) throw DecodeError("malformed request");
  if (r.verb != "W" && r.verb != "R" && r.verb != "WR") throw DecodeError("unknown verb " + r.verb);
  try {
    auto digits = [](const std::string& x) {
      return !x.empty() && std::all_of(x.begin(), x.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    if (!digits(q)) throw DecodeError("bad round");
    if (!digits(slot)) throw DecodeError("bad slot");
    r.key.round = std::stoull(q);
    auto s = std::stoul(slot);
    if (s < 1 || s > 4) throw DecodeError("bad slot");
    r.key.slot = static_cast<std::uint32_t>(s);
  } catch (const std::logic_error&) {
    throw DecodeError("bad key");
  }
  // an empty value encodes to nothing, so a write may end after the slot
  if (r.verb != "R" && in >> b64) r.value = base64_decode(b64);
  if (in >> extra) throw DecodeError("trailing fields");
  return r;
}

// Answer one request line against a store.
inline std::string handle(Store& store, const std::string& line) {
  try {
    auto req = parse_request(line);
    if (req.verb == "W") {
      store.write_once(req.key, req.value);
      return "OK";
    }
    if (req.verb == "R") return value_resp(store.read(req.key));
    return value_resp(store.write_read(req.key, req.value));
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n' || c == '\r') c = ' ';
    return "ERR " + msg;
  }
}

inline std::optional<Bytes> parse_value_resp(const std::string& line) {
  if (line == "NONE") return std::nullopt;
  if (line.rfind("V ", 0) == 0) return base64_decode(std::string_view(line).substr(2));
  if (line.rfind("ERR", 0) == 0) throw StoreIoError("store: " + line);
  throw StoreIoError("unexpected store response: " + line);
}

}  // namespace wire

// TCP service: one thread per connection, one request per line.
class StoreServer {
 public:
  StoreServer(std::shared_ptr<Store> store, std::uint16_t port = 0, const std::string& host = "127.0.0.1")
      : store_(std::move(store)), acceptor_(io_) {
    namespace ip = boost::asio::ip;
    ip::tcp::endpoint ep(ip::make_address(host), port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(ip::tcp::acceptor::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~StoreServer() { stop(); }
  StoreServer(const StoreServer&) = delete;
  StoreServer& operator=(const StoreServer&) = delete;

  std::uint16_t port() const { return port_; }
  std::uint64_t requests() const { return requests_.load(); }

  void stop() {
    if (stopped_.exchange(true)) return;
    boost::system::error_code ec;
    // close() alone does not wake a thread blocked in accept()
    ::shutdown(acceptor_.native_handle(), SHUT_RDWR);
    acceptor_.close(ec);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::list<Conn> conns;
    {
      std::lock_guard lock(mu_);
      for (auto& c : conns_) c.sock->shutdown(boost::asio::ip::tcp::socket::shutdown_both, ec);
      conns.swap(conns_);
    }
    for (auto& c : conns) c.thread.join();
  }

 private:
  struct Conn {
    std::shared_ptr<boost::asio::ip::tcp::socket> sock;
    std::thread thread;
  };

  void accept_loop() {
    for (;;) {
      auto sock = std::make_shared<boost::asio::ip::tcp::socket>(io_);
      boost::system::error_code ec;
      acceptor_.accept(*sock, ec);
      if (ec) {
        if (stopped_) return;
        continue;
      }
      sock->set_option(boost::asio::ip::tcp::no_delay(true), ec);
      std::lock_guard lock(mu_);
      if (stopped_) return;
      conns_.push_back({sock, std::thread([this, sock] { serve(*sock); })});
    }
  }

  void serve(boost::asio::ip::tcp::socket& sock) {
    boost::asio::streambuf buf;
    boost::system::error_code ec;
    for (;;) {
      boost::asio::read_until(sock, buf, '\n', ec);
      if (ec) return;
      std::istream in(&buf);
      std::string line;
      std::getline(in, line);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      ++requests_;
      auto resp = wire::handle(*store_, line) + "\n";
      boost::asio::write(sock, boost::asio::buffer(resp), ec);
      if (ec) return;
    }
  }

  std::shared_ptr<Store> store_;
  boost::asio::io_context io_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::mutex mu_;
  std::list<Conn> conns_;
  std::atomic<bool> stopped_{false};
  std::atomic<std::uint64_t> requests_{0};
};

// Client for StoreServer. Calls are serialized; a broken connection is
// reported as StoreIoError and reopened on the next call.
class RemoteStore final : public Store {
 public:
  RemoteStore(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}

  void write_once(const Key& k, ByteSpan v) override {
    check_key(k);
    auto resp = call(wire::write_req(k, v));
    if (resp != "OK") throw StoreIoError("store: " + resp);
  }
  std::optional<Bytes> read(const Key& k) override {
    check_key(k);
    return wire::parse_value_resp(call(wire::read_req(k)));
  }
  Bytes write_read(const Key& k, ByteSpan v) override {
    check_key(k);
    auto got = wire::parse_value_resp(call(wire::write_read_req(k, v)));
    if (!got) throw StoreIoError("store answered NONE to WR at " + k.str());
    return *got;
  }

 private:
  std::string call(const std::string& line) {
    std::lock_guard lock(mu_);
    try {
      if (!sock_) {
        sock_.emplace(io_);
        boost::asio::ip::tcp::resolver res(io_);
        boost::asio::connect(*sock_, res.resolve(host_, std::to_string(port_)));
        sock_->set_option(boost::asio::ip::tcp::no_delay(true));
      }
      boost::asio::write(*sock_, boost::asio::buffer(line + "\n"));
      boost::asio::read_until(*sock_, buf_, '\n');
      std::istream in(&buf_);
      std::string resp;
      std::getline(in, resp);
      return resp;
    } catch (const boost::system::system_error& e) {
      sock_.reset();
      buf_.consume(buf_.size());
      throw StoreIoError(host_ + ":" + std::to_string(port_) + ": " + e.what());
    }
  }

  std::string host_;
  std::uint16_t port_;
  std::mutex mu_;
  boost::asio::io_context io_;
  std::optional<boost::asio::ip::tcp::socket> sock_;
  boost::asio::streambuf buf_;
};

// Counts the bytes a store would exchange over the line protocol.
class CountingStore final : public Store {
 public:
  explicit CountingStore(Store& inner) : inner_(inner) {}

  void write_once(const Key& k, ByteSpan v) override {
    inner_.write_once(k, v);
    add(wire::write_req(k, v).size() + 1 + 3);
  }
  std::optional<Bytes> read(const Key& k) override {
    auto got = inner_.read(k);
    add(wire::read_req(k).size() + 1 + wire::value_resp(got).size() + 1);
    return got;
  }
  Bytes write_read(const Key& k, ByteSpan v) override {
    auto got = inner_.write_read(k, v);
    add(wire::write_read_req(k, v).size() + 1 + wire::value_resp(got).size() + 1);
    return got;
  }

  std::uint64_t bytes() const { return bytes_.load(); }
  std::uint64_t requests() const { return requests_.load(); }

 private:
  void add(std::size_t b) {
    bytes_ += b;
    ++requests_;
  }

  Store& inner_;
  std::atomic<std::uint64_t> bytes_{0};
  std::atomic<std::uint64_t> requests_{0};
};

// "mem" -> fresh MemoryStore; "tcp://host:port" or "host:port" -> RemoteStore;
// anything else is a FileStore directory.
inline std::shared_ptr<Store> open_store(const std::string& spec) {
  if (spec == "mem") return std::make_shared<MemoryStore>();
  std::string rest = spec;
  bool tcp = false;
  if (rest.rfind("tcp://", 0) == 0) {
    rest = rest.substr(6);
    tcp = true;
  }
  auto colon = rest.rfind(':');
  if (colon != std::string::npos && colon + 1 < rest.size() &&
      rest.find_first_not_of("0123456789", colon + 1) == std::string::npos && rest.find('/') == std::string::npos) {
    auto port = std::stoul(rest.substr(colon + 1));
    if (port == 0 || port > 65535) throw UsageError("bad port in store endpoint " + spec);
    return std::make_shared<RemoteStore>(rest.substr(0, colon), static_cast<std::uint16_t>(port));
  }
  if (tcp) throw UsageError("store endpoint needs host:port: " + spec);
  return std::make_shared<FileStore>(spec);
}

}  // namespace qsc
