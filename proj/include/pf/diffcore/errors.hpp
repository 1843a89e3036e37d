#pragma once

#include <stdexcept>
#include <string>

namespace pf {

// Base of every error raised by the toolkit. The category string is what the
// CLI writes into its machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define PF_DEFINE_ERROR(Name, tag)                                      \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(tag, what) {}        \
  };

PF_DEFINE_ERROR(StructuralError, "structural")
PF_DEFINE_ERROR(NumericError, "numeric")
PF_DEFINE_ERROR(StateError, "state")
PF_DEFINE_ERROR(ConfigError, "config")
PF_DEFINE_ERROR(DataError, "data")
PF_DEFINE_ERROR(IoError, "io")
PF_DEFINE_ERROR(MetricError, "metric")
PF_DEFINE_ERROR(ContractError, "contract")

#undef PF_DEFINE_ERROR

}  // namespace pf
