// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace convernet {

/// Base for every error raised by the library. The CLI maps the category to
/// its exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { Data, Config, Internal };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

#define CONVERNET_DEFINE_ERROR(Name, Cat)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(Category::Cat, what) {} \
  };

CONVERNET_DEFINE_ERROR(ShapeError, Internal)
CONVERNET_DEFINE_ERROR(NumericError, Internal)
CONVERNET_DEFINE_ERROR(RankError, Internal)
CONVERNET_DEFINE_ERROR(TapeError, Internal)
CONVERNET_DEFINE_ERROR(ConfigError, Config)
CONVERNET_DEFINE_ERROR(DataError, Data)
CONVERNET_DEFINE_ERROR(IoError, Data)
CONVERNET_DEFINE_ERROR(VocabularyError, Data)
CONVERNET_DEFINE_ERROR(LengthError, Data)
CONVERNET_DEFINE_ERROR(LookupError, Data)
CONVERNET_DEFINE_ERROR(VersionError, Data)
CONVERNET_DEFINE_ERROR(CorruptionError, Data)
CONVERNET_DEFINE_ERROR(PairingError, Data)
CONVERNET_DEFINE_ERROR(UndefinedMetricError, Data)
CONVERNET_DEFINE_ERROR(EmptyInputError, Data)
CONVERNET_DEFINE_ERROR(TrainingError, Data)

#undef CONVERNET_DEFINE_ERROR

}  // namespace convernet
