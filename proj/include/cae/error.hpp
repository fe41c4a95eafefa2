#pragma once

#include <stdexcept>
#include <string>

namespace cae {

// Base of every error the library raises. The CLI maps the subclasses onto
// exit codes (config/invalid input -> 2, io -> 3, numeric -> 4).
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class InvalidInput : public Error {
  public:
    using Error::Error;
};

class InvalidToken : public InvalidInput {
  public:
    using InvalidInput::InvalidInput;
};

class SpanNotFound : public InvalidInput {
  public:
    using InvalidInput::InvalidInput;
};

class TemplateError : public InvalidInput {
  public:
    using InvalidInput::InvalidInput;
};

class IoError : public Error {
  public:
    using Error::Error;
};

class NumericError : public Error {
  public:
    using Error::Error;
};

class SingularSystem : public NumericError {
  public:
    SingularSystem(const std::string& what, double smallest_pivot)
        : NumericError(what), smallest_pivot_(smallest_pivot) {}

    double smallest_pivot() const { return smallest_pivot_; }

  private:
    double smallest_pivot_;
};

// Wraps an error raised inside a named pipeline stage.
class StageError : public Error {
  public:
    StageError(std::string stage, const Error& cause, int exit_code)
        : Error("[" + stage + "] " + cause.what()), stage_(std::move(stage)), exit_code_(exit_code) {}

    const std::string& stage() const { return stage_; }
    int exit_code() const { return exit_code_; }

  private:
    std::string stage_;
    int exit_code_;
};

// 2 config / invalid input, 3 io, 4 numeric, 1 anything else.
inline int exit_code_for(const Error& e) {
    if (auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidInput*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

// Runs `fn`, re-raising library errors tagged with the stage name.
template <typename F>
decltype(auto) in_stage(const std::string& stage, F&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(stage, e, exit_code_for(e));
    }
}

}  // namespace cae
