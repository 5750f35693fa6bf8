#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace seqbias {

// All numeric state is double precision, row-major so that per-example /
// per-timestep rows are contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void demand(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace seqbias
