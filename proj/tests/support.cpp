#include "support.hpp"

#include <hdf5.h>

#include <cmath>
#include <stdexcept>

namespace tma::test {
namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tma-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_array_file(const fs::path& path, const std::vector<std::uint8_t>& pixels, std::size_t count,
                      int height, int width, const std::vector<long long>& labels,
                      const std::string& labels_name) {
  const hid_t file = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
  if (file < 0) throw std::runtime_error("cannot create " + path.string());
  const hsize_t dims[4] = {count, static_cast<hsize_t>(height), static_cast<hsize_t>(width), 3};
  const hid_t space = H5Screate_simple(4, dims, nullptr);
  const hid_t images = H5Dcreate2(file, "images", H5T_STD_U8LE, space, H5P_DEFAULT, H5P_DEFAULT, H5P_DEFAULT);
  if (count > 0) H5Dwrite(images, H5T_NATIVE_UCHAR, H5S_ALL, H5S_ALL, H5P_DEFAULT, pixels.data());
  H5Dclose(images);
  H5Sclose(space);

  const hsize_t ldims[1] = {labels.size()};
  const hid_t lspace = H5Screate_simple(1, ldims, nullptr);
  const hid_t lset = H5Dcreate2(file, labels_name.c_str(), H5T_STD_I64LE, lspace, H5P_DEFAULT,
                                H5P_DEFAULT, H5P_DEFAULT);
  if (!labels.empty()) H5Dwrite(lset, H5T_NATIVE_LLONG, H5S_ALL, H5S_ALL, H5P_DEFAULT, labels.data());
  H5Dclose(lset);
  H5Sclose(lspace);
  H5Fclose(file);
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

EmbeddingBatch random_unit(Rng& rng, Eigen::Index rows, Eigen::Index cols, Modality m) {
  return normalize({random_matrix(rng, rows, cols), m, false});
}

double brute_direction(const Matrix& a, const Matrix& b, double inverse_tau) {
  const auto n = a.rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double denom = 0.0;
    double diag = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      double dot = 0.0;
      for (Eigen::Index d = 0; d < a.cols(); ++d) dot += a(i, d) * b(j, d);
      const double e = std::exp(dot * inverse_tau);
      denom += e;
      if (i == j) diag = e;
    }
    sum += std::log(diag / denom);
  }
  return -sum / static_cast<double>(n);
}

double brute_stage1(const Matrix& img, const Matrix& sym, const Matrix& txt, double inverse_tau) {
  return 0.5 * brute_direction(img, txt, inverse_tau) + 0.5 * brute_direction(sym, txt, inverse_tau);
}

double brute_stage2(const Matrix& img, const Matrix& sym, const Matrix& txt, double inverse_tau) {
  return brute_direction(img, txt, inverse_tau) + brute_direction(img, sym, inverse_tau) +
         brute_direction(sym, txt, inverse_tau);
}

double brute_average_precision(const std::vector<bool>& ranked, std::size_t total_relevant, std::size_t k) {
  if (total_relevant == 0) return 0.0;
  double precision_sum = 0.0;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
    if (!ranked[i]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= i; ++j) hits += ranked[j] ? 1 : 0;
    precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return precision_sum / static_cast<double>(std::min(total_relevant, k));
}

double brute_macro_f1(const std::vector<std::vector<long long>>& counts) {
  const std::size_t k = counts.size();
  double sum = 0.0;
  int used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(counts[c][c]);
    double actual = 0.0;
    double predicted = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      actual += static_cast<double>(counts[c][j]);
      predicted += static_cast<double>(counts[j][c]);
    }
    if (actual == 0.0 && predicted == 0.0) continue;
    ++used;
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = actual > 0 ? tp / actual : 0.0;
    sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / used;
}

}  // namespace tma::test
