#pragma once

#include <stdexcept>
#include <string>

namespace sintent {

// Exit-code category carried by every library error.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Malformed input line; line numbers are 1-based.
struct ParseError : DataError {
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line;
};

struct ValidationError : DataError {
    ValidationError(const std::string& id, const std::string& what)
        : DataError("transcript '" + id + "': " + what), transcript_id(id) {}
    std::string transcript_id;
};

// Corrupt or incompatible checkpoint; offset is the byte position where reading failed.
struct FormatError : DataError {
    FormatError(std::size_t offset, const std::string& what)
        : DataError("checkpoint offset " + std::to_string(offset) + ": " + what), offset(offset) {}
    std::size_t offset;
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

} // namespace sintent
