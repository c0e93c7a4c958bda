#include <fmt/format.h>

#include <istream>
#include <ostream>

#include "secura/matrix.hpp"

namespace secura {

std::string format_real(double v) { return fmt::format("{}", v); }

void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_real(m(i, j));
    }
    os << '\n';
  }
}

Matrix read_matrix(std::istream& is) {
  long long rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows <= 0 || cols <= 0) {
    throw ShapeError("read_matrix: malformed header");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (!(is >> m(i, j))) {
        throw ShapeError(fmt::format("read_matrix: missing entry ({}, {})", i, j));
      }
    }
  }
  return m;
}

}  // namespace secura
