#pragma once

#include <stdexcept>
#include <string>

namespace riser {

// Error taxonomy. The CLI maps these onto distinct exit codes
// (see cli_app.hpp), so keep the hierarchy flat and predictable.

/// Bad or inconsistent configuration (unknown key, out-of-range value, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Problems with datasets, catalogs, checkpoints and other on-disk artifacts.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite value and cannot continue.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Inserting an item that is already present in the prefix tree.
class DuplicateItemError : public DataError {
 public:
  explicit DuplicateItemError(const std::string& what) : DataError(what) {}
};

/// Item token sequence violates the terminal-token layout.
class MalformedItemError : public DataError {
 public:
  explicit MalformedItemError(const std::string& what) : DataError(what) {}
};

/// A token sequence was queried that is not covered by the catalog/trie.
class OutOfCatalogError : public DataError {
 public:
  explicit OutOfCatalogError(const std::string& what) : DataError(what) {}
};

/// An API contract was violated by the caller (programming error).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

}  // namespace riser
