#pragma once

#include <stdexcept>
#include <string>

namespace profact {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class ValueOutOfRange : public Error {
public:
    using Error::Error;
};

class EmptyMask : public Error {
public:
    using Error::Error;
};

class ParamOutOfRange : public Error {
public:
    using Error::Error;
};

class PlacementFailed : public Error {
public:
    using Error::Error;
};

class CropInfeasible : public Error {
public:
    using Error::Error;
};

class UnknownKind : public Error {
public:
    using Error::Error;
};

class FileNotFound : public Error {
public:
    using Error::Error;
};

class DataUnavailable : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace profact
