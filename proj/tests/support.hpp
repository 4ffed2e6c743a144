#pragma once

#include "disdis/harness.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace disdis::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    }
    return m;
}

inline ModelConfig tiny_model(int K = 5) {
    ModelConfig m;
    m.K = K;
    m.d_f = 4;
    m.d_g = 3;
    m.d_c = 3;
    m.enc_hidden = 3;
    m.dec_hidden = 4;
    return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const std::filesystem::path p = std::filesystem::temp_directory_path() / ("disdis_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace disdis::testing
