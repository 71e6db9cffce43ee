#pragma once

#include "entropy/core/error.hpp"
#include "entropy/platform/config.hpp"
#include "entropy/platform/platform.hpp"

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace entropy::platform {

/// 400, 401, 404, 409, 422 or 502 per error family.
int http_status(ErrorCode code);

/// {"error": {"code": "<kebab-case>", "message": "..."}}
json error_body(ErrorCode code, const std::string& message);

/// The /v1 HTTP JSON surface over one Platform. Mutating methods need "Authorization: Bearer <token>".
class ApiServer {
public:
    /// Raises invalid-config for an empty token.
    ApiServer(Platform& platform, std::string token, Logger* logger = nullptr, int threads = 8);
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Port 0 binds any free port. Returns the bound port; raises connection-failure when binding fails.
    int bind(const std::string& host, int port);
    /// Serves on the bound socket until stop().
    void listen();
    /// bind() plus listen() on a background thread.
    int start(const std::string& host, int port);
    void stop();

private:
    void routes();

    Platform& platform_;
    std::string token_;
    Logger* logger_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

} // namespace entropy::platform
