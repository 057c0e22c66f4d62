#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace attrib {

// Error taxonomy. The CLI maps Input -> exit 2, everything else -> exit 1.
enum class ErrorKind {
    Input,     // bad user input: malformed files, out-of-range values, bad flags
    Contract,  // API misuse: shape mismatch, unknown primitive id, invalid config
    Numeric,   // non-finite intermediates, undefined statistics
    Io,        // filesystem / serialization failures
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_input(const std::string& msg) { throw Error(ErrorKind::Input, msg); }
[[noreturn]] inline void throw_contract(const std::string& msg) { throw Error(ErrorKind::Contract, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorKind::Numeric, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorKind::Io, msg); }

// FNV-1a, used for content hashes in manifests and parameter fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t v);

// Shortest-but-exact float formatting: 17 significant digits.
std::string format_g17(double v);

// Writes via a temp file in the same directory, then renames.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Worker count: ATTRIB_THREADS env var, else hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n) across worker_count() threads. Exceptions are
// rethrown on the calling thread (first one wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace attrib
