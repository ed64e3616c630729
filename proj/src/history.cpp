#include "camforge/history.hpp"

#include <cstdio>
#include <sstream>

namespace camforge {

std::string history_csv(std::span<const HistoryRow> rows) {
  std::ostringstream os;
  os << "epoch,split,loss,accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f\n", r.epoch, r.split.c_str(), r.loss, r.accuracy);
    os << buf;
  }
  return os.str();
}

}  // namespace camforge
