#pragma once

#include <stdexcept>
#include <string>

namespace dualstyle {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ScheduleError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class NoPosteriorError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class SingularityError : public Error { using Error::Error; };
class NormalizationError : public Error { using Error::Error; };
class ConfigurationError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

/// Unreadable or unrecognised weight file (bad magic, unknown architecture).
class FormatError : public Error { using Error::Error; };

/// Header and payload of a weight file disagree.
class CorruptWeightsError : public Error { using Error::Error; };

/// A non-finite value showed up while evaluating a loss term or its gradient.
class NumericError : public Error {
public:
    NumericError(std::string term, const std::string& what)
        : Error(what), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

/// The sampling latent stopped being finite.
class DivergenceError : public Error {
public:
    DivergenceError(int step, const std::string& what) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

}  // namespace dualstyle
