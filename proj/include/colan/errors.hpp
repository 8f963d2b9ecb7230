#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace colan {

// Failure classes map onto process exit codes in the CLI:
// usage = 1, validation = 2, transport = 3, numeric = 4.
enum class ErrorClass { usage = 1, validation = 2, transport = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

#define COLAN_DEFINE_ERROR(NAME, CLASS)                       \
  class NAME : public Error {                                 \
   public:                                                    \
    explicit NAME(const std::string& what)                    \
        : Error(ErrorClass::CLASS, std::string(#NAME ": ") + what) {} \
  }

// solver
COLAN_DEFINE_ERROR(DimensionMismatch, validation);
COLAN_DEFINE_ERROR(DegenerateAtom, validation);
COLAN_DEFINE_ERROR(NonFiniteInput, validation);
COLAN_DEFINE_ERROR(RankDeficient, validation);
COLAN_DEFINE_ERROR(EmptyInput, validation);

// dictionary
COLAN_DEFINE_ERROR(DuplicateName, validation);
COLAN_DEFINE_ERROR(SpaceMismatch, validation);
COLAN_DEFINE_ERROR(ZeroAtom, validation);

// transplant
COLAN_DEFINE_ERROR(UnknownConcept, validation);
COLAN_DEFINE_ERROR(KOutOfRange, validation);

// mining
COLAN_DEFINE_ERROR(TransportError, transport);
COLAN_DEFINE_ERROR(MalformedResponse, validation);
COLAN_DEFINE_ERROR(ValidationFailed, validation);
COLAN_DEFINE_ERROR(MissingApiKey, validation);
COLAN_DEFINE_ERROR(DimensionDrift, validation);

// store
COLAN_DEFINE_ERROR(IoError, validation);
COLAN_DEFINE_ERROR(BadMagic, validation);
COLAN_DEFINE_ERROR(UnsupportedVersion, validation);
COLAN_DEFINE_ERROR(TruncatedPayload, validation);
COLAN_DEFINE_ERROR(OversizeGuard, validation);
COLAN_DEFINE_ERROR(SchemaViolation, validation);

// numeric
COLAN_DEFINE_ERROR(NotConverged, numeric);

#undef COLAN_DEFINE_ERROR

// Non-fatal diagnostics (degenerate edits, omitted image attachments).
// Default handler writes to stderr.
using WarningHandler = std::function<void(std::string_view)>;
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace colan
