#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testutil {

// unique scratch directory, removed on destruction
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::mt19937_64 eng{std::random_device{}()};
        path = std::filesystem::temp_directory_path() / ("texfield_test_" + std::to_string(eng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void spit(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    os << content;
}

}  // namespace testutil
