#pragma once

#include <stdexcept>
#include <string>

namespace plugen {

/// Error categories. The CLI maps each one to a distinct process exit code.
enum class ErrorKind {
  contract = 2,
  missing_file = 3,
  schema = 4,
  dimension = 5,
  numeric = 6,
  training = 7,
  oracle = 8,
  recovery = 9,
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return "contract_violation";
    case ErrorKind::missing_file: return "missing_file";
    case ErrorKind::schema: return "schema_mismatch";
    case ErrorKind::dimension: return "dimension_mismatch";
    case ErrorKind::numeric: return "numeric_error";
    case ErrorKind::training: return "training_error";
    case ErrorKind::oracle: return "oracle_error";
    case ErrorKind::recovery: return "recovery_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define PLUGEN_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

PLUGEN_DEFINE_ERROR(ContractViolation, contract)
PLUGEN_DEFINE_ERROR(MissingFileError, missing_file)
PLUGEN_DEFINE_ERROR(SchemaError, schema)
PLUGEN_DEFINE_ERROR(DimensionError, dimension)
PLUGEN_DEFINE_ERROR(NumericError, numeric)
PLUGEN_DEFINE_ERROR(TrainingError, training)
PLUGEN_DEFINE_ERROR(OracleError, oracle)
PLUGEN_DEFINE_ERROR(RecoveryError, recovery)

#undef PLUGEN_DEFINE_ERROR

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace plugen
