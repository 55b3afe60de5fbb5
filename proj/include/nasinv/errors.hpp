// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nasinv {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define NASINV_DEFINE_ERROR(NAME)                              \
  class NAME : public Error {                                  \
   public:                                                     \
    explicit NAME(const std::string& what) : Error(what) {}    \
  }

NASINV_DEFINE_ERROR(InvalidCutoff);
NASINV_DEFINE_ERROR(EmptyInput);
NASINV_DEFINE_ERROR(RateTooLow);
NASINV_DEFINE_ERROR(RateMismatch);
NASINV_DEFINE_ERROR(DegenerateRange);
NASINV_DEFINE_ERROR(ChannelMismatch);
NASINV_DEFINE_ERROR(MissingChannel);
NASINV_DEFINE_ERROR(FormatError);
NASINV_DEFINE_ERROR(ShapeError);
NASINV_DEFINE_ERROR(ZeroVariance);
NASINV_DEFINE_ERROR(EmptyBatch);
NASINV_DEFINE_ERROR(NumericError);
NASINV_DEFINE_ERROR(StateError);
NASINV_DEFINE_ERROR(InvalidArgument);
NASINV_DEFINE_ERROR(InsufficientSpeakers);
NASINV_DEFINE_ERROR(DivisionByZero);
NASINV_DEFINE_ERROR(IoError);
NASINV_DEFINE_ERROR(RunExists);

#undef NASINV_DEFINE_ERROR

}  // namespace nasinv
