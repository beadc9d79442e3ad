#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace cytoforge {

// Single exception type for all structured errors. The kind is part of the
// contract: callers and tests dispatch on it, the message is for humans.
class Error : public std::runtime_error {
public:
    enum class Kind {
        InvalidArgument,
        DimensionMismatch,
        Io,
        Format,
        Convergence,
        Config,
        MissingData,
    };

    Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::InvalidArgument: return "invalid_argument";
            case Kind::DimensionMismatch: return "dimension_mismatch";
            case Kind::Io: return "io";
            case Kind::Format: return "format";
            case Kind::Convergence: return "convergence";
            case Kind::Config: return "config";
            case Kind::MissingData: return "missing_data";
        }
        return "unknown";
    }

private:
    Kind kind_;
};

// CG failure carries the state it stopped in.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, double rel_residual, int iterations)
        : Error(Kind::Convergence, msg), rel_residual_(rel_residual), iterations_(iterations) {}

    double rel_residual() const { return rel_residual_; }
    int iterations() const { return iterations_; }

private:
    double rel_residual_;
    int iterations_;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void raise(Error::Kind kind, const Parts&... parts) {
    std::ostringstream os;
    detail::msg_append(os, parts...);
    throw Error(kind, os.str());
}

template <typename... Parts>
void check(bool cond, Error::Kind kind, const Parts&... parts) {
    if (!cond) raise(kind, parts...);
}

}  // namespace cytoforge
