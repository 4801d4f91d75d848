#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace scanet {

// Runtime failure in graph construction, evaluation, or file handling.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/shape validation per op. On by default; long training runs turn it off.
bool checked_mode();
void set_checked_mode(bool on);

// Worker count for kernel-level parallelism. Results are bitwise identical
// for any thread count: every output element is written by exactly one worker.
int num_threads();
void set_num_threads(int n);

// Static split of [0, n) into contiguous chunks, one per worker.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

// Round-trip-exact decimal form (17 significant digits).
std::string fmt17(double v);

}  // namespace scanet
