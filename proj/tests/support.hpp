#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "mgh/diffcore.hpp"
#include "mgh/featstage.hpp"

namespace testutil {

inline mgh::Array random_array(mgh::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    mgh::Array a(std::move(shape), 0.0);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : a.values()) v = u(rng);
    return a;
}

inline mgh::SequenceFeatures random_sequence(std::size_t frames, std::size_t c, std::size_t h, std::size_t w,
                                             std::mt19937_64& rng, std::uint32_t id = 0)
{
    mgh::SequenceFeatures seq;
    seq.tracklet_id = id;
    seq.camera_id = id % 2;
    for (std::size_t t = 0; t < frames; ++t) seq.frames.emplace_back(random_array({c, h, w}, rng));
    return seq;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("mgh_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<char> read_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path& path)
{
    const auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

} // namespace testutil
