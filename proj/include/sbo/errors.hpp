#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sbo {

// Base of every error the library raises. `code()` is the machine-readable
// name that also appears in REST error bodies.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message, std::string path = {})
        : std::runtime_error(message), code_(std::move(code)), path_(std::move(path)) {}

    const std::string& code() const noexcept { return code_; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string code_;
    std::string path_;
};

// Malformed encoding; `offset` is the byte position in the input.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& message, std::size_t offset)
        : Error("SyntaxError", message + " at offset " + std::to_string(offset)),
          offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& message, std::string path = {})
        : Error("SchemaError", message, std::move(path)) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t position, std::vector<std::string> expected)
        : Error("ParseError", message), position_(position), expected_(std::move(expected)) {}

    std::size_t position() const noexcept { return position_; }
    const std::vector<std::string>& expected() const noexcept { return expected_; }

private:
    std::size_t position_;
    std::vector<std::string> expected_;
};

// A rule_text that fails the grammar, tagged with the list that carries it.
class RuleError : public Error {
public:
    RuleError(const std::string& list_name, const ParseError& cause, std::string path = {})
        : Error("RuleError", "rule of list '" + list_name + "': " + cause.what(), std::move(path)),
          list_name_(list_name), position_(cause.position()) {}

    const std::string& list_name() const noexcept { return list_name_; }
    std::size_t position() const noexcept { return position_; }

private:
    std::string list_name_;
    std::size_t position_;
};

class NormalizeError : public Error {
public:
    explicit NormalizeError(const std::string& message) : Error("NormalizeError", message) {}
};

class EvalError : public Error {
public:
    explicit EvalError(const std::string& message) : Error("EvalError", message) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message, std::string path = {})
        : Error("ValidationError", message, std::move(path)) {}
};

class Unauthorized : public Error {
public:
    explicit Unauthorized(const std::string& message) : Error("Unauthorized", message) {}
};

class Conflict : public Error {
public:
    explicit Conflict(const std::string& message) : Error("Conflict", message) {}
};

class NotFound : public Error {
public:
    explicit NotFound(const std::string& message) : Error("NotFound", message) {}
};

class FetchError : public Error {
public:
    explicit FetchError(const std::string& message) : Error("FetchError", message) {}
};

class NoIntegrationAvailable : public Error {
public:
    explicit NoIntegrationAvailable(const std::string& message)
        : Error("NoIntegrationAvailable", message) {}
};

class EmptyBlockSetError : public Error {
public:
    explicit EmptyBlockSetError(const std::string& message)
        : Error("EmptyBlockSetError", message) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message, std::string path = {})
        : Error("ConfigError", message, std::move(path)) {}
};

class ScenarioError : public Error {
public:
    explicit ScenarioError(const std::string& message, std::string path = {})
        : Error("ScenarioError", message + (path.empty() ? "" : " (at " + path + ")"), path) {}
};

}  // namespace sbo
