#pragma once

#include <string>
#include <vector>

#include "iotchain/ledger.hpp"

namespace iotchain {

struct SizeRow {
  std::string name;
  ledger::Mode mode;
  std::size_t bytes;
};

/// One signed canonical instance of every transaction kind, with the mode it
/// travels in and its encoded length. Update releases are counted without
/// their payload.
std::vector<SizeRow> size_table();
/// "device-registration, merkle, 79"
std::string format(const SizeRow& row);

}  // namespace iotchain
