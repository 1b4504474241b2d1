// Copyright 2026 The needledrive Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// WebSocket + HTTP front end for TelemetryService. One io thread; the
// simulation thread only ever posts to it.
//
//   ws://host:port/       telemetry frames out, commands in, acks out
//   GET /state            current frame plus static config, as JSON

#include <csignal>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "needledrive/telemetry.hpp"

namespace needledrive {

namespace server_detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, TelemetryService& svc) : ws_(std::move(socket)), svc_(svc) {}
  ~WsSession() { finish(); }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    sub_ = svc_.subscribe();
    sub_->set_notify([weak = weak_from_this(), ex = ws_.get_executor()] {
      net::post(ex, [weak] {
        if (auto self = weak.lock()) self->flush();
      });
    });
    flush();
    read();
  }

  void read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    svc_.submit_text(beast::buffers_to_string(buffer_.data()), sub_);
    buffer_.consume(buffer_.size());
    read();
  }

  void flush() {
    if (writing_ || closing_ || !sub_) return;
    if (auto msg = sub_->try_pop()) {
      writing_ = true;
      out_ = std::move(*msg);
      ws_.async_write(net::buffer(out_), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
      return;
    }
    if (sub_->closed()) {
      closing_ = true;
      websocket::close_reason reason(websocket::close_code::policy_error, sub_->close_reason());
      ws_.async_close(reason, [self = shared_from_this()](beast::error_code) { self->finish(); });
    }
  }

  void on_write(beast::error_code ec, std::size_t) {
    writing_ = false;
    if (ec) {
      finish();
      return;
    }
    flush();
  }

  void finish() {
    if (sub_) {
      sub_->set_notify(nullptr);
      svc_.unsubscribe(sub_);
      sub_.reset();
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  TelemetryService& svc_;
  std::shared_ptr<Subscription> sub_;
  beast::flat_buffer buffer_;
  std::string out_;
  bool writing_ = false;
  bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, TelemetryService& svc) : stream_(std::move(socket)), svc_(svc) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::read, shared_from_this()));
  }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), svc_)->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>(respond());
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || res->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  http::response<http::string_body> respond() const {
    http::response<http::string_body> res;
    res.version(req_.version());
    res.keep_alive(req_.keep_alive());
    res.set(http::field::server, "needledrive");
    if (req_.method() == http::verb::get && req_.target() == "/state") {
      res.result(http::status::ok);
      res.set(http::field::content_type, "application/json");
      res.body() = svc_.state_document().dump() + "\n";
    } else if (req_.method() != http::verb::get) {
      res.result(http::status::method_not_allowed);
      res.set(http::field::content_type, "text/plain");
      res.body() = "only GET is supported\n";
    } else {
      res.result(http::status::not_found);
      res.set(http::field::content_type, "text/plain");
      res.body() = "not found; try GET /state or a websocket upgrade\n";
    }
    res.prepare_payload();
    return res;
  }

  beast::tcp_stream stream_;
  TelemetryService& svc_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace server_detail

class ServerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The service must outlive the server, and should be stopped first so no
/// frame is published while the io context shuts down.
class TelemetryServer {
 public:
  /// Binds immediately; throws ServerError if the address or port is
  /// unavailable. Port 0 picks a free port.
  TelemetryServer(TelemetryService& svc, const std::string& address, unsigned short port)
      : svc_(svc), acceptor_(ioc_) {
    namespace net = server_detail::net;
    using server_detail::tcp;
    boost::system::error_code ec;
    const auto addr = net::ip::make_address(address, ec);
    if (ec) throw ServerError("bad listen address '" + address + "': " + ec.message());
    const tcp::endpoint ep{addr, port};
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw ServerError("cannot listen on " + address + ":" + std::to_string(port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
    accept();
  }

  ~TelemetryServer() { stop(); }

  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  unsigned short port() const { return port_; }

  /// Serves on the calling thread until stop() or, if asked, SIGINT/SIGTERM.
  void run(bool stop_on_signal = false) {
    std::optional<server_detail::net::signal_set> signals;
    if (stop_on_signal) {
      signals.emplace(ioc_, SIGINT, SIGTERM);
      signals->async_wait([this](const boost::system::error_code& ec, int) {
        if (!ec) ioc_.stop();
      });
    }
    ioc_.run();
  }

  void start() {
    if (thread_.joinable()) return;
    thread_ = std::thread([this] { ioc_.run(); });
  }

  void stop() {
    ioc_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  void accept() {
    acceptor_.async_accept(server_detail::net::make_strand(ioc_),
                           [this](boost::system::error_code ec, server_detail::tcp::socket socket) {
                             if (!ec) std::make_shared<server_detail::HttpSession>(std::move(socket), svc_)->run();
                             if (acceptor_.is_open()) accept();
                           });
  }

  TelemetryService& svc_;
  server_detail::net::io_context ioc_{1};
  server_detail::tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::thread thread_;
};

}  // namespace needledrive
