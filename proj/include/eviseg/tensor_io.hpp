#pragma once

#include <iosfwd>
#include <string>

#include "eviseg/tensor.hpp"

namespace eviseg {

// "TNS1" container: 4-byte magic, u32-LE rank, rank x u32-LE dims, then the
// row-major f64-LE payload. Round-trips are bit exact.
void write_tns1(const Tensor& t, std::ostream& os);
void write_tns1(const Tensor& t, const std::string& path);
Tensor read_tns1(std::istream& is);
Tensor read_tns1(const std::string& path);

}  // namespace eviseg
