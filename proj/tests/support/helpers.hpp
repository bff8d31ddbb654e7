#pragma once

#include "safr/common.hpp"
#include "safr/rng.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace safr::testing {

inline std::vector<std::vector<double>> random_rows(Rng& rng, std::size_t t, std::size_t d, double lo = -1.0, double hi = 1.0) {
    std::vector<std::vector<double>> out(t, std::vector<double>(d));
    for (auto& row : out) {
        for (auto& v : row) v = rng.uniform(lo, hi);
    }
    return out;
}

inline MatrixD to_matrix(const std::vector<std::vector<double>>& rows) {
    MatrixD m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

/// Random row-stochastic T x T matrix; `peaked` sharpens rows toward one-hot.
inline MatrixD random_stochastic(Rng& rng, std::size_t t, double peaked = 1.0) {
    MatrixD a(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = std::pow(rng.uniform_open(), peaked);
        a.row(i) /= a.row(i).sum();
    }
    return a;
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-12) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::size_t count_substr(const std::string& s, const std::string& what) {
    std::size_t n = 0;
    for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + what.size())) ++n;
    return n;
}

/// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("safr_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

} // namespace safr::testing
