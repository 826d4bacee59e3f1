#pragma once

// Model serving over a child process's stdin/stdout.
//
// Handshake (server -> client): "MGNS" u32 version
// Request:  "MGN1" u8 opcode u8 count, then per tensor: u32 ndim, ndim x u32 dims, f32 payload
// Response: u8 status; status 0 -> one tensor, otherwise u32 length + UTF-8 message
// All integers and floats are little-endian.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "magnet/backends.hpp"
#include "magnet/errors.hpp"
#include "magnet/io.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

inline constexpr char kHandshakeMagic[4] = {'M', 'G', 'N', 'S'};
inline constexpr char kRequestMagic[4] = {'M', 'G', 'N', '1'};
inline constexpr std::uint32_t kProtocolVersion = 1;

enum class Opcode : std::uint8_t { segment = 1, combine = 2 };

inline std::vector<std::uint8_t> encode_request(Opcode op, const std::vector<RawTensor>& tensors) {
    std::vector<std::uint8_t> out(std::begin(kRequestMagic), std::end(kRequestMagic));
    out.push_back(static_cast<std::uint8_t>(op));
    out.push_back(static_cast<std::uint8_t>(tensors.size()));
    for (const auto& t : tensors) wire::encode_tensor_body(out, t);
    return out;
}

inline std::vector<std::uint8_t> encode_ok_response(const RawTensor& t) {
    std::vector<std::uint8_t> out{0};
    wire::encode_tensor_body(out, t);
    return out;
}

inline std::vector<std::uint8_t> encode_error_response(std::uint8_t status, const std::string& message) {
    std::vector<std::uint8_t> out{status};
    wire::put_u32(out, static_cast<std::uint32_t>(message.size()));
    out.insert(out.end(), message.begin(), message.end());
    return out;
}

/// Checks a decoded response against the expected (H, W, C) and returns it as a
/// ProbMap. Inputs already summing to one within 1e-5 are returned bit-exact;
/// others are renormalized.
inline ProbMap validate_response(RawTensor t, int h, int w, int c) {
    if (t.dims.size() != 3 || t.dims[0] != static_cast<std::uint32_t>(h) || t.dims[1] != static_cast<std::uint32_t>(w) ||
        t.dims[2] != static_cast<std::uint32_t>(c)) {
        std::string got;
        for (auto d : t.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
        throw ProtocolError("response tensor has dims " + got + ", expected " + shape_string(h, w, c));
    }
    for (float v : t.data) {
        if (!std::isfinite(v) || v < 0.0f) throw ProtocolError("response tensor has a non-finite or negative value");
    }
    ProbMap m = prob_map_from_raw(std::move(t));
    if (is_valid_prob_map(m)) return m;
    try {
        return normalize_prob(std::move(m));
    } catch (const ZeroSumPixel& e) {
        throw ProtocolError(std::string("response tensor: ") + e.what());
    }
}

/// One child process speaking the protocol. Not thread-safe; see ExternalEndpointPool.
class ProcessChannel {
public:
    ProcessChannel(std::vector<std::string> argv, std::chrono::milliseconds timeout)
        : argv_(std::move(argv)), timeout_(timeout) {
        if (argv_.empty()) throw InvalidArgument("external endpoint needs a command");
    }

    ProcessChannel(const ProcessChannel&) = delete;
    ProcessChannel& operator=(const ProcessChannel&) = delete;

    ~ProcessChannel() { shutdown(); }

    /// Sends one request and returns the decoded tensor of an ok response.
    RawTensor call(Opcode op, const std::vector<RawTensor>& tensors, const std::vector<std::uint32_t>& expected_dims) {
        if (pid_ <= 0) start();
        try {
            write_all(encode_request(op, tensors));
            std::uint8_t status = 0;
            read_exact(&status, 1);
            if (status != 0) {
                const std::uint32_t len = read_u32();
                if (len > kMaxMessage) throw ProtocolError("error message length " + std::to_string(len) + " too large");
                std::string msg(len, '\0');
                read_exact(reinterpret_cast<std::uint8_t*>(msg.data()), len);
                throw ServerError(status, msg);
            }
            const std::uint32_t ndim = read_u32();
            if (ndim == 0 || ndim > kMaxTensorDims) throw ProtocolError("response ndim " + std::to_string(ndim));
            RawTensor t;
            t.dims.resize(ndim);
            for (auto& d : t.dims) d = read_u32();
            if (t.dims != expected_dims) {
                // Payload length is unknown to us now; the stream cannot be resynchronized.
                std::string got;
                for (auto d : t.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
                throw ProtocolError("response tensor has dims " + got);
            }
            const std::size_t n = t.element_count();
            std::vector<std::uint8_t> payload(4 * n);
            read_exact(payload.data(), payload.size());
            t.data.resize(n);
            for (std::size_t i = 0; i < n; ++i) t.data[i] = wire::get_f32(payload.data() + 4 * i);
            return t;
        } catch (const ServerError&) {
            throw;  // framing intact, channel reusable
        } catch (...) {
            shutdown();
            throw;
        }
    }

    bool running() const { return pid_ > 0; }

    void shutdown() noexcept {
        if (to_child_ >= 0) ::close(to_child_);
        if (from_child_ >= 0) ::close(from_child_);
        to_child_ = from_child_ = -1;
        if (pid_ > 0) {
            int status = 0;
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                    pid_ = -1;
                    return;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(2));
            }
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
    }

private:
    static constexpr std::uint32_t kMaxMessage = 1u << 20;

    void start() {
        // A dead server must surface as an error from write(), not a signal.
        ::signal(SIGPIPE, SIG_IGN);
        int in_pipe[2];
        int out_pipe[2];
        if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw BackendFailure(std::string("pipe: ") + std::strerror(errno));
        if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw BackendFailure(std::string("pipe: ") + std::strerror(errno));
        }
        std::vector<char*> cargv;
        for (auto& a : argv_) cargv.push_back(a.data());
        cargv.push_back(nullptr);
        const pid_t pid = ::fork();
        if (pid < 0) {
            for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
            throw BackendFailure(std::string("fork: ") + std::strerror(errno));
        }
        if (pid == 0) {
            ::dup2(in_pipe[0], STDIN_FILENO);
            ::dup2(out_pipe[1], STDOUT_FILENO);
            ::execvp(cargv[0], cargv.data());
            ::_exit(127);
        }
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        pid_ = pid;
        to_child_ = in_pipe[1];
        from_child_ = out_pipe[0];
        try {
            std::uint8_t hello[8];
            read_exact(hello, sizeof hello);
            if (std::memcmp(hello, kHandshakeMagic, 4) != 0) throw ProtocolError("bad handshake magic");
            const std::uint32_t version = wire::get_u32(hello + 4);
            if (version != kProtocolVersion) throw ProtocolError("unsupported protocol version " + std::to_string(version));
        } catch (...) {
            shutdown();
            throw;
        }
    }

    std::chrono::milliseconds remaining(std::chrono::steady_clock::time_point deadline) const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    }

    void write_all(const std::vector<std::uint8_t>& bytes) {
        const auto deadline = std::chrono::steady_clock::now() + timeout_;
        std::size_t done = 0;
        while (done < bytes.size()) {
            wait_fd(to_child_, POLLOUT, deadline);
            const ssize_t n = ::write(to_child_, bytes.data() + done, bytes.size() - done);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw ProtocolError(std::string("write to server failed: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    void read_exact(std::uint8_t* dst, std::size_t len) {
        const auto deadline = std::chrono::steady_clock::now() + timeout_;
        std::size_t done = 0;
        while (done < len) {
            wait_fd(from_child_, POLLIN, deadline);
            const ssize_t n = ::read(from_child_, dst + done, len - done);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw ProtocolError(std::string("read from server failed: ") + std::strerror(errno));
            }
            if (n == 0) throw ProtocolError("server closed the stream");
            done += static_cast<std::size_t>(n);
        }
    }

    std::uint32_t read_u32() {
        std::uint8_t b[4];
        read_exact(b, 4);
        return wire::get_u32(b);
    }

    void wait_fd(int fd, short events, std::chrono::steady_clock::time_point deadline) {
        for (;;) {
            const auto left = remaining(deadline);
            if (left.count() <= 0) throw Timeout("no response from server within " + std::to_string(timeout_.count()) + " ms");
            pollfd p{fd, events, 0};
            const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
            }
            if (rc == 0) continue;
            if (p.revents & (events | POLLHUP | POLLERR)) return;
        }
    }

    std::vector<std::string> argv_;
    std::chrono::milliseconds timeout_;
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
};

struct ExternalEndpointConfig {
    std::vector<std::string> command;
    std::chrono::milliseconds timeout{5000};
    /// 1 serializes every call through one process; more spawns one process per concurrent caller.
    int processes = 1;
};

/// Fixed set of server processes handed out one caller at a time.
class ExternalEndpointPool {
public:
    explicit ExternalEndpointPool(ExternalEndpointConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.processes < 1) throw InvalidArgument("need at least one server process");
        for (int i = 0; i < cfg_.processes; ++i) {
            channels_.push_back(std::make_unique<ProcessChannel>(cfg_.command, cfg_.timeout));
            idle_.push_back(channels_.back().get());
        }
    }

    RawTensor call(Opcode op, const std::vector<RawTensor>& tensors, const std::vector<std::uint32_t>& expected_dims) {
        ProcessChannel* ch = acquire();
        try {
            auto out = ch->call(op, tensors, expected_dims);
            release(ch);
            return out;
        } catch (...) {
            release(ch);
            throw;
        }
    }

    const ExternalEndpointConfig& config() const { return cfg_; }

private:
    ProcessChannel* acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return !idle_.empty(); });
        ProcessChannel* ch = idle_.back();
        idle_.pop_back();
        return ch;
    }

    void release(ProcessChannel* ch) {
        {
            std::lock_guard lock(mutex_);
            idle_.push_back(ch);
        }
        cv_.notify_one();
    }

    ExternalEndpointConfig cfg_;
    std::vector<std::unique_ptr<ProcessChannel>> channels_;
    std::vector<ProcessChannel*> idle_;
    std::mutex mutex_;
    std::condition_variable cv_;
};

class ExternalBackend final : public SegmentationBackend {
public:
    ExternalBackend(ExternalEndpointConfig cfg, int classes)
        : pool_(std::make_unique<ExternalEndpointPool>(std::move(cfg))), classes_(classes) {}

    int classes() const override { return classes_; }

    ProbMap segment(const Image& patch, const PatchContext&) const override {
        const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(patch.height()),
                                              static_cast<std::uint32_t>(patch.width()),
                                              static_cast<std::uint32_t>(classes_)};
        auto t = pool_->call(Opcode::segment, {to_raw(patch)}, dims);
        return validate_response(std::move(t), patch.height(), patch.width(), classes_);
    }

private:
    std::unique_ptr<ExternalEndpointPool> pool_;
    int classes_;
};

class ExternalCombiner final : public Combiner {
public:
    explicit ExternalCombiner(ExternalEndpointConfig cfg)
        : pool_(std::make_unique<ExternalEndpointPool>(std::move(cfg))) {}

    ProbMap combine(const ProbMap& y, const ProbMap& o) const override {
        check_combine_inputs(y, o);
        const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(y.height()), static_cast<std::uint32_t>(y.width()),
                                              static_cast<std::uint32_t>(y.channels())};
        auto t = pool_->call(Opcode::combine, {to_raw(y), to_raw(o)}, dims);
        return validate_response(std::move(t), y.height(), y.width(), y.channels());
    }

private:
    std::unique_ptr<ExternalEndpointPool> pool_;
};

}  // namespace magnet
