#pragma once

#include <span>
#include <string>

namespace camforge {

// One line of a training-history CSV.
struct HistoryRow {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Header `epoch,split,loss,accuracy`, six decimals.
std::string history_csv(std::span<const HistoryRow> rows);

}  // namespace camforge
