#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pga {

// Bad argument values: non-finite numbers, mismatched sizes, out-of-range settings.
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A structural requirement of an operation is not met (e.g. a scene without object Gaussians).
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// An object is asked for something it was not prepared for (e.g. a render without a trace).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A caller combined operations in a way the contract forbids (e.g. differentiating eval-mode output).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
public:
    enum class Location { Line, Record };

    ParseError(const std::string& what, Location where, std::size_t index)
        : std::runtime_error(what + (where == Location::Line ? " (line " : " (record ") +
                             std::to_string(index) + ")"),
          where_(where),
          index_(index) {}

    Location location() const noexcept { return where_; }
    std::size_t index() const noexcept { return index_; }

private:
    Location where_;
    std::size_t index_;
};

class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(std::string attribute)
        : std::runtime_error("missing required attribute '" + attribute + "'"),
          attribute_(std::move(attribute)) {}

    const std::string& attribute() const noexcept { return attribute_; }

private:
    std::string attribute_;
};

}  // namespace pga
