#pragma once

#include <iosfwd>
#include <string>

#include "supersal/supernet.hpp"
#include "supersal/tensor.hpp"

namespace sal {

// Binary tensor record, little-endian:
//   bytes 0-3   magic "SST0"
//   bytes 4-5   rank (u16, 1..4)
//   bytes 6-7   dtype (u16, 0 = f32, 1 = f64)
//   bytes 8-15  extents (4 x u16, unused trailing extents = 1)
// followed by the elements in row-major order (f32 or f64, little-endian).
// Truncation errors name the expected vs actual byte counts.

template <typename T>
void write_tensor_record(std::ostream& out, const Tensor<T>& t);

template <typename T>
Tensor<T> read_tensor_record(std::istream& in, const std::string& context);

// Checkpoint of one parameter store: space name, layout fingerprint, flat
// parameter buffer, flat batch-norm buffer, per-norm accumulation counters.
// Re-saving the same state is byte-identical.
template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path);

// The store must already be constructed over the same space.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::string& path);

// Space name recorded in a checkpoint header, without loading the payload.
std::string checkpoint_space_name(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace sal
