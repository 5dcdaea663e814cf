#include "pga/attack.hpp"
#include "pga/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace pga {
namespace {

constexpr int kMaxIterations = 100;
constexpr double kTolerance = 1e-5;
constexpr int kLatticeLevels = 8;
constexpr std::size_t kDefaultSwatches = 30;
constexpr std::uint64_t kSwatchSeed = 0x5eed5a1e;

std::size_t nearest(const Vec3& p, const std::vector<Vec3>& centroids) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = (p - centroids[c]).squaredNorm();
        if (d < bd) {
            bd = d;
            best = c;
        }
    }
    return best;
}

bool fewer_distinct_than(std::span<const Vec3> pixels, std::size_t k) {
    std::vector<Vec3> seen;
    for (const auto& p : pixels) {
        if (std::none_of(seen.begin(), seen.end(), [&](const Vec3& s) { return s == p; })) {
            seen.push_back(p);
            if (seen.size() >= k) return false;
        }
    }
    return true;
}

}  // namespace

ColorPalette build_palette(std::span<const Vec3> pixels, int k, std::uint64_t seed) {
    if (k < 1) throw InvalidParameter("build_palette: k must be at least 1");
    if (pixels.size() < static_cast<std::size_t>(k)) {
        throw InvalidParameter("build_palette: " + std::to_string(pixels.size()) + " pixels for k = " + std::to_string(k));
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t n = pixels.size();
    const std::size_t K = static_cast<std::size_t>(k);

    ColorPalette palette;
    palette.duplicate_centroids = fewer_distinct_than(pixels, K);

    // k-means++ seeding
    std::vector<Vec3> centroids;
    centroids.push_back(pixels[static_cast<std::size_t>(unit(rng) * static_cast<double>(n)) % n]);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = (pixels[i] - centroids[0]).squaredNorm();
    while (centroids.size() < K) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = unit(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(pixels[pick]);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], (pixels[i] - centroids.back()).squaredNorm());
    }

    std::vector<std::size_t> assign(n);
    for (int it = 0; it < kMaxIterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) assign[i] = nearest(pixels[i], centroids);
        std::vector<Vec3> sums(K, Vec3::Zero());
        std::vector<std::size_t> counts(K, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[assign[i]] += pixels[i];
            ++counts[assign[i]];
        }
        double moved = 0.0;
        for (std::size_t c = 0; c < K; ++c) {
            if (counts[c] == 0) continue;
            const Vec3 next = sums[c] / static_cast<double>(counts[c]);
            moved = std::max(moved, (next - centroids[c]).norm());
            centroids[c] = next;
        }
        palette.iterations = it + 1;
        if (moved <= kTolerance) break;
    }

    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[nearest(pixels[i], centroids)];
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
    for (std::size_t c : order) {
        palette.colors.push_back(centroids[c].cwiseMax(0.0).cwiseMin(1.0));
        palette.populations.push_back(counts[c]);
    }
    return palette;
}

PrintableColorSet default_printable_colors() {
    std::vector<Vec3> lattice;
    for (int r = 0; r < kLatticeLevels; ++r) {
        for (int g = 0; g < kLatticeLevels; ++g) {
            for (int b = 0; b < kLatticeLevels; ++b) {
                lattice.emplace_back(r / 7.0, g / 7.0, b / 7.0);
            }
        }
    }
    std::mt19937_64 rng(kSwatchSeed);
    for (std::size_t i = 0; i < kDefaultSwatches; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (lattice.size() - i));
        std::swap(lattice[i], lattice[j]);
    }
    lattice.resize(kDefaultSwatches);
    return lattice;
}

PrintableColorSet parse_printable_colors(std::istream& in) {
    PrintableColorSet colors;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        std::string s = line.substr(first, last - first + 1);
        if (s.rfind("//", 0) == 0) continue;
        if (s[0] == '#') s.erase(0, 1);
        if (s.size() != 6 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
            throw ParseError("expected a 6-digit hex colour, got '" + line + "'", ParseError::Location::Line, line_no);
        }
        const unsigned long v = std::stoul(s, nullptr, 16);
        colors.emplace_back(((v >> 16) & 0xff) / 255.0, ((v >> 8) & 0xff) / 255.0, (v & 0xff) / 255.0);
    }
    if (colors.empty()) throw ParseError("palette file has no colours", ParseError::Location::Line, line_no);
    return colors;
}

PrintableColorSet load_printable_colors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open palette file '" + path.string() + "'");
    return parse_printable_colors(in);
}

void save_printable_colors(const PrintableColorSet& colors, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    for (const auto& c : colors) {
        char buf[16];
        auto byte = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", byte(c[0]), byte(c[1]), byte(c[2]));
        out << buf << '\n';
    }
}

}  // namespace pga
