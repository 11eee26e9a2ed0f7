#pragma once

#include <stdexcept>
#include <string>

namespace vosh {

/// Precondition on caller-supplied values failed.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Internal protocol misuse: missing cached state, unpopulated statistics, mismatched components.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Scene or pipeline configuration rejected during validation.
class DescriptorError : public std::runtime_error {
public:
    explicit DescriptorError(const std::string& key, const std::string& what)
        : std::runtime_error(key + ": " + what), key_(key) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

enum class ParseErrorKind { BadMagic, Truncated, VersionMismatch, Checksum, Malformed };

inline const char* to_string(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::BadMagic: return "magic";
        case ParseErrorKind::Truncated: return "truncated";
        case ParseErrorKind::VersionMismatch: return "version";
        case ParseErrorKind::Checksum: return "checksum";
        case ParseErrorKind::Malformed: return "malformed";
    }
    return "unknown";
}

class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorKind kind, const std::string& section, const std::string& what)
        : std::runtime_error(std::string("parse error [") + to_string(kind) + "] in " + section + ": " + what),
          kind_(kind), section_(section) {}
    ParseErrorKind kind() const noexcept { return kind_; }
    const std::string& section() const noexcept { return section_; }

private:
    ParseErrorKind kind_;
    std::string section_;
};

}  // namespace vosh
