// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace geoforge {

struct HttpRequest {
  std::string method = "GET";
  std::string url;
  std::string body;
  std::string content_type;
  std::vector<std::pair<std::string, std::string>> headers;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;
};

/// Blocking request/response channel. Implementations throw
/// Error(kNetworkError) when no HTTP response could be obtained at all;
/// HTTP-level failures are returned as a status code.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// Live transport over cpp-httplib (http and https).
class LiveTransport final : public Transport {
 public:
  explicit LiveTransport(std::chrono::seconds timeout = std::chrono::seconds(60));
  HttpResponse send(const HttpRequest& request) override;

  /// Process-wide number of outbound connections opened by any LiveTransport.
  static std::uint64_t connections_opened() noexcept;

 private:
  std::chrono::seconds timeout_;
};

/// Replays recorded responses keyed by "METHOD url". Each key holds a queue;
/// the final entry repeats once the queue is drained. Thread-safe.
class ReplayTransport final : public Transport {
 public:
  ReplayTransport() = default;

  void add(std::string method, std::string url, HttpResponse response);

  /// Loads `<dir>/index.json`:
  /// {"entries":[{"method","url","status","body_file","content_type"}]}
  /// with body files resolved relative to `dir`.
  static std::unique_ptr<ReplayTransport> from_directory(const std::filesystem::path& dir);

  HttpResponse send(const HttpRequest& request) override;

  std::size_t requests_served() const noexcept { return served_.load(); }
  const std::filesystem::path& source() const noexcept { return source_; }

 private:
  struct Slot {
    std::vector<HttpResponse> responses;
    std::size_t next = 0;
  };

  mutable std::mutex mutex_;
  std::map<std::string, Slot> slots_;
  std::atomic<std::size_t> served_{0};
  std::filesystem::path source_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  /// Injected so tests do not sleep. Defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// 408, 429 and 5xx are transient, as is a transport-level NetworkError.
bool is_transient_status(int status) noexcept;

/// Sends with exponential backoff. Returns the first non-transient response;
/// throws Error(kNetworkError) once attempts are exhausted.
HttpResponse send_with_retry(Transport& transport, const HttpRequest& request,
                             const RetryPolicy& policy = {});

std::string url_encode(std::string_view text);

}  // namespace geoforge
