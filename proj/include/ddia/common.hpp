#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddia {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using IVec = std::vector<int>;
using cplx = std::complex<double>;

// Base error for all toolkit failures; subcategories carry context strings.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
  int line;
  ParseError(int ln, const std::string& msg)
      : Error("parse error at line " + std::to_string(ln) + ": " + msg), line(ln) {}
};

struct NumericalError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace ddia
