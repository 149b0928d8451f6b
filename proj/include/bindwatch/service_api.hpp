#pragma once

// JSON service over the store: published list, candidate browsing,
// watchlist management and the review queue.

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "bindwatch/feedback_store.hpp"

namespace bindwatch {

class BindFailure : public Error {
public:
    using Error::Error;
};

inline constexpr std::size_t kPageSize = 200;

struct ApiRequest {
    std::string method;  // "GET", "POST"
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
    std::string authorization;  // raw Authorization header
};

struct ApiResponse {
    int status = 200;
    std::string body;  // JSON
};

// Transport-independent request handling. Mutations need
// "Authorization: Bearer <api_token>"; with no token configured they are
// refused.
class ApiService {
public:
    explicit ApiService(Store& store) : store_(store) {}
    ApiResponse handle(const ApiRequest& req);

private:
    ApiResponse route(const ApiRequest& req);

    Store& store_;
};

// Listening HTTP front end; handlers run on the server's worker threads.
class ApiServer {
public:
    // Throws BindFailure. Port 0 picks a free port.
    ApiServer(Store& store, const std::string& host, int port);
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    int port() const noexcept { return port_; }
    void stop();
    // Blocks until stop().
    void wait();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

// "host:port", "[v6]:port" or ":port".
std::pair<std::string, int> parse_listen_addr(const std::string& text);

}  // namespace bindwatch
