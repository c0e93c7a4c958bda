#include <fmt/format.h>
#include <fmt/ranges.h>

#include <istream>
#include <ostream>
#include <sstream>

#include "secura/adapters.hpp"

namespace secura {
namespace {

std::string join(const std::vector<Index>& idx) { return fmt::format("{}", fmt::join(idx, ",")); }

std::vector<Index> split_indices(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& os, const CabrAdapter<double>& ad) {
  os << fmt::format("CABR h={} d={} r={} m={} cols={} rows={}\n", ad.selection.c.rows(),
                    ad.selection.r_mat.cols(), ad.rank(), ad.inner(),
                    join(ad.selection.col_indices), join(ad.selection.row_indices));
  write_matrix(os, ad.selection.c);
  write_matrix(os, ad.selection.r_mat);
  write_matrix(os, ad.w_a);
  write_matrix(os, ad.w_b);
}

void write_checkpoint(std::ostream& os, const LoraAdapter<double>& ad) {
  os << fmt::format("LORA h={} d={} r={} scaling={}\n", ad.a.rows(), ad.b.cols(), ad.rank(),
                    format_real(ad.scaling));
  write_matrix(os, ad.a);
  write_matrix(os, ad.b);
}

void write_checkpoint(std::ostream& os, const CurLoraAdapter<double>& ad) {
  os << fmt::format("CURLORA h={} d={} r={} cols={} rows={}\n", ad.selection.c.rows(),
                    ad.selection.r_mat.cols(), ad.rank(), join(ad.selection.col_indices),
                    join(ad.selection.row_indices));
  write_matrix(os, ad.selection.c);
  write_matrix(os, ad.selection.r_mat);
  write_matrix(os, ad.u);
}

CabrAdapter<double> read_cabr_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ShapeError("checkpoint: missing header");
  std::stringstream header(line);
  std::string family;
  header >> family;
  if (family != "CABR") throw ContractError("checkpoint: expected CABR, found '" + family + "'");
  CabrAdapter<double> ad;
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "cols") ad.selection.col_indices = split_indices(value);
    if (key == "rows") ad.selection.row_indices = split_indices(value);
  }
  ad.selection.c = read_matrix(is);
  ad.selection.r_mat = read_matrix(is);
  ad.w_a = read_matrix(is);
  ad.w_b = read_matrix(is);
  if (ad.selection.c.cols() != ad.rank() || ad.w_a.rows() != ad.rank() ||
      ad.w_b.cols() != ad.rank() || ad.w_a.cols() != ad.w_b.rows()) {
    throw ShapeError("checkpoint: inconsistent CABR component shapes");
  }
  std::getline(is, line);  // consume trailing newline
  return ad;
}

}  // namespace secura
