// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "geoforge/transport.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "geoforge/error.hpp"

namespace geoforge {

namespace {

std::atomic<std::uint64_t> g_live_connections{0};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::kInvalidArgument, fmt::format("URL without scheme: '{}'", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kMissingFixture, fmt::format("cannot read fixture '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string slot_key(std::string_view method, std::string_view url) {
  return fmt::format("{} {}", method, url);
}

}  // namespace

LiveTransport::LiveTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

std::uint64_t LiveTransport::connections_opened() noexcept { return g_live_connections.load(); }

HttpResponse LiveTransport::send(const HttpRequest& request) {
  const SplitUrl parts = split_url(request.url);
  httplib::Client client(parts.origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_follow_location(true);

  httplib::Headers headers;
  for (const auto& [name, value] : request.headers) headers.emplace(name, value);

  g_live_connections.fetch_add(1);
  httplib::Result result =
      request.method == "POST"
          ? client.Post(parts.path, headers, request.body,
                        request.content_type.empty() ? "application/octet-stream"
                                                     : request.content_type)
          : client.Get(parts.path, headers);
  if (!result) {
    throw Error(Errc::kNetworkError, fmt::format("{} {} failed: {}", request.method, request.url,
                                                 httplib::to_string(result.error())));
  }
  HttpResponse response;
  response.status = result->status;
  response.body = result->body;
  response.content_type = result->get_header_value("Content-Type");
  return response;
}

void ReplayTransport::add(std::string method, std::string url, HttpResponse response) {
  std::lock_guard lock(mutex_);
  slots_[slot_key(method, url)].responses.push_back(std::move(response));
}

std::unique_ptr<ReplayTransport> ReplayTransport::from_directory(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.json";
  if (!std::filesystem::exists(index_path)) {
    throw Error(Errc::kMissingFixture,
                fmt::format("replay fixture index not found: '{}'", index_path.string()));
  }
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(index_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kMissingFixture,
                fmt::format("fixture index '{}' is not valid JSON: {}", index_path.string(), e.what()));
  }
  auto transport = std::make_unique<ReplayTransport>();
  transport->source_ = dir;
  for (const auto& entry : index.at("entries")) {
    HttpResponse response;
    response.status = entry.at("status").get<int>();
    if (entry.contains("body_file")) {
      response.body = read_file(dir / entry.at("body_file").get<std::string>());
    } else if (entry.contains("body")) {
      response.body = entry.at("body").get<std::string>();
    }
    response.content_type = entry.value("content_type", "");
    transport->add(entry.value("method", "GET"), entry.at("url").get<std::string>(),
                  std::move(response));
  }
  return transport;
}

HttpResponse ReplayTransport::send(const HttpRequest& request) {
  std::lock_guard lock(mutex_);
  auto it = slots_.find(slot_key(request.method, request.url));
  if (it == slots_.end()) {
    throw Error(Errc::kNetworkError,
                fmt::format("no recorded response for {} {} (fixtures: '{}')", request.method,
                            request.url, source_.empty() ? "<in-memory>" : source_.string()));
  }
  Slot& slot = it->second;
  const std::size_t i = std::min(slot.next, slot.responses.size() - 1);
  if (slot.next < slot.responses.size()) ++slot.next;
  served_.fetch_add(1);
  return slot.responses[i];
}

bool is_transient_status(int status) noexcept {
  return status == 408 || status == 429 || (status >= 500 && status <= 599);
}

HttpResponse send_with_retry(Transport& transport, const HttpRequest& request,
                             const RetryPolicy& policy) {
  const int attempts = std::max(1, policy.max_attempts);
  auto delay = policy.initial_backoff;
  std::string last_failure;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      HttpResponse response = transport.send(request);
      if (!is_transient_status(response.status)) return response;
      last_failure = fmt::format("HTTP {}", response.status);
    } catch (const Error& e) {
      if (e.code() != Errc::kNetworkError) throw;
      last_failure = e.what();
    }
    if (attempt == attempts) break;
    spdlog::warn("{} {}: {} (attempt {}/{}), retrying in {} ms", request.method, request.url,
                 last_failure, attempt, attempts, delay.count());
    if (policy.sleep) {
      policy.sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
    delay = std::chrono::milliseconds(
        static_cast<std::int64_t>(static_cast<double>(delay.count()) * policy.multiplier));
  }
  throw Error(Errc::kNetworkError, fmt::format("{} {} failed after {} attempts: {}", request.method,
                                               request.url, attempts, last_failure));
}

std::string url_encode(std::string_view text) {
  std::string out;
  out.reserve(text.size() * 3);
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.' || ch == '~') {
      out.push_back(static_cast<char>(ch));
    } else {
      out += fmt::format("%{:02X}", ch);
    }
  }
  return out;
}

}  // namespace geoforge
