#pragma once

#include <stdexcept>
#include <string>

namespace simagent {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent configuration handed to the engine.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or missing scenario input files.
class ParseError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// Name collisions, duplicate registrations, edits to scenarios in use.
class ConflictError : public Error {
public:
    using Error::Error;
};

// Caller supplied a value of the wrong type, an unknown option or an out-of-range window.
class UsageError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class PlannerError : public Error {
public:
    using Error::Error;
};

} // namespace simagent
