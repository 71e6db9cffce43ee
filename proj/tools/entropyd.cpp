#include "entropy/core/error.hpp"
#include "entropy/platform/api_server.hpp"
#include "entropy/platform/config.hpp"
#include "entropy/platform/platform.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <condition_variable>
#include <csignal>
#include <iostream>
#include <mutex>
#include <pthread.h>
#include <thread>

using namespace entropy;
using namespace entropy::platform;

int main(int argc, char** argv) {
    CLI::App app{"ENTROPY platform daemon: serves the /v1 HTTP JSON API"};
    std::optional<std::string> config_file;
    std::optional<int> port;
    std::optional<std::string> host, data_dir, clock_mode, token;
    app.add_option("--config", config_file, "key = value configuration file");
    app.add_option("--port", port, "listen port (0 picks a free port)");
    app.add_option("--host", host, "listen address");
    app.add_option("--data-dir", data_dir, "directory for the measurement log");
    app.add_option("--clock", clock_mode, "system or simulated");
    app.add_option("--token", token, "bearer token for mutating requests");
    CLI11_PARSE(app, argc, argv);

    Logger log(std::cerr);
    PlatformConfig cfg;
    try {
        std::optional<std::filesystem::path> file;
        if (config_file) file = *config_file;
        cfg = load_config(file, process_environment());
        if (port) apply_setting(cfg, "port", std::to_string(*port));
        if (host) apply_setting(cfg, "host", *host);
        if (data_dir) apply_setting(cfg, "data_dir", *data_dir);
        if (clock_mode) apply_setting(cfg, "clock", *clock_mode);
        if (token) apply_setting(cfg, "token", *token);
        if (cfg.token.empty()) fail(ErrorCode::InvalidConfig, "no token configured (token, ENTROPY_TOKEN or --token)");
    } catch (const Error& e) {
        log.error("invalid configuration", {{"code", to_string(e.code())}, {"message", e.what()}});
        return 2;
    }

    // Signals are consumed by a dedicated thread; every other thread inherits the blocked mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGINT);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    try {
        Logger requests(std::cerr, log_level_from_string(cfg.log_level));
        Platform platform(cfg);
        ApiServer server(platform, cfg.token, &requests, cfg.threads);
        const int bound = server.bind(cfg.host, cfg.port);
        log.info("listening", {{"host", cfg.host}, {"port", bound}, {"config", to_json(cfg)}});
        // Machine-readable line for supervisors that start the daemon on port 0.
        std::cout << "{\"port\":" << bound << "}" << std::endl;

        std::mutex mu;
        std::condition_variable cv;
        bool stopping = false;
        std::thread ticker([&] {
            std::unique_lock lock(mu);
            while (!cv.wait_for(lock, cfg.tick_interval, [&] { return stopping; })) {
                if (platform.simulated()) continue;
                lock.unlock();
                try {
                    platform.tick();
                } catch (const std::exception& e) {
                    log.error("tick failed", {{"message", e.what()}});
                }
                lock.lock();
            }
        });
        std::thread waiter([&] {
            int sig = 0;
            sigwait(&signals, &sig);
            log.info("shutting down", {{"signal", sig}});
            {
                std::lock_guard lock(mu);
                stopping = true;
            }
            cv.notify_all();
            server.stop();
        });
        server.listen();
        // listen() also returns when the socket fails; wake the waiter so it can exit.
        {
            std::lock_guard lock(mu);
            if (!stopping) pthread_kill(waiter.native_handle(), SIGTERM);
        }
        waiter.join();
        ticker.join();
        platform.store().flush();
        log.info("stopped");
    } catch (const Error& e) {
        log.error("fatal", {{"code", to_string(e.code())}, {"message", e.what()}});
        return e.code() == ErrorCode::InvalidConfig ? 2 : 1;
    }
    return 0;
}
