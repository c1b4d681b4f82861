#pragma once

#include "tma/contrastive.hpp"
#include "tma/evaluation.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tma::test {

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// HDF5 file with uint8 "images" (N x h x w x 3) and an int64 label array.
void write_array_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                      std::size_t count, int height, int width, const std::vector<long long>& labels,
                      const std::string& labels_name);

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols);
EmbeddingBatch random_unit(Rng& rng, Eigen::Index rows, Eigen::Index cols, Modality m);

// Independent scalar oracles.

/// -(1/N) sum_i log( exp(s_ii) / sum_j exp(s_ij) ) with s = a b^T / tau, by loops.
double brute_direction(const Matrix& a, const Matrix& b, double inverse_tau);
double brute_stage1(const Matrix& img, const Matrix& sym, const Matrix& txt, double inverse_tau);
double brute_stage2(const Matrix& img, const Matrix& sym, const Matrix& txt, double inverse_tau);

/// AP from the full relevance list with the min(R, k) denominator.
double brute_average_precision(const std::vector<bool>& ranked_relevance, std::size_t total_relevant,
                               std::size_t k);

/// Macro F1 from raw counts via precision and recall.
double brute_macro_f1(const std::vector<std::vector<long long>>& counts);

}  // namespace tma::test
