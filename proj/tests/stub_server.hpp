#pragma once

#include <atomic>
#include <functional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

namespace testutil {

// Minimal chat-completions stub bound to an ephemeral local port. The
// handler decides the response per call (0-indexed call counter).
class StubServer {
public:
  using Handler =
      std::function<void(int call, const httplib::Request&, httplib::Response&)>;

  explicit StubServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   handler_(calls_++, req, res);
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
  }
  int calls() const { return calls_; }

private:
  httplib::Server server_;
  Handler handler_;
  std::atomic<int> calls_{0};
  int port_ = 0;
  std::thread thread_;
};

inline nlohmann::json completion_body(const std::string& content) {
  return nlohmann::json{
      {"choices",
       nlohmann::json::array({nlohmann::json{{"message", nlohmann::json{{"content", content}}}}})}};
}

}  // namespace testutil
