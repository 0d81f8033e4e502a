#include "dat/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "dat/rng.hpp"

namespace dat {

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path, long& offset) {
    unsigned char buf[4];
    f.read(reinterpret_cast<char*>(buf), 4);
    if (f.gcount() != 4)
        throw std::runtime_error(path + ": truncated at byte offset " + std::to_string(offset) +
                                 " (expected 4 more bytes)");
    offset += 4;
    return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) | (uint32_t(buf[2]) << 8) |
           uint32_t(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& image_path, const std::string& label_path) {
    std::ifstream imgf(image_path, std::ios::binary);
    if (!imgf) throw std::runtime_error(image_path + ": cannot open");
    long off = 0;
    const uint32_t magic = read_be32(imgf, image_path, off);
    if (magic != 0x00000803u) {
        char msg[128];
        std::snprintf(msg, sizeof(msg), "%s: bad image magic 0x%08x at byte offset 0 (want 0x00000803)",
                      image_path.c_str(), magic);
        throw std::runtime_error(msg);
    }
    const uint32_t n = read_be32(imgf, image_path, off);
    const uint32_t rows = read_be32(imgf, image_path, off);
    const uint32_t cols = read_be32(imgf, image_path, off);
    if (n == 0 || rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
        throw std::runtime_error(image_path + ": implausible dims n=" + std::to_string(n) +
                                 " rows=" + std::to_string(rows) + " cols=" + std::to_string(cols));
    Dataset ds;
    ds.n = int(n);
    ds.c = 1;
    ds.h = int(rows);
    ds.w = int(cols);
    const size_t npix = size_t(n) * rows * cols;
    std::vector<unsigned char> raw(npix);
    imgf.read(reinterpret_cast<char*>(raw.data()), std::streamsize(npix));
    if (size_t(imgf.gcount()) != npix)
        throw std::runtime_error(image_path + ": truncated pixel payload at byte offset " +
                                 std::to_string(off + imgf.gcount()) + " (want " +
                                 std::to_string(npix) + " bytes of pixels)");
    ds.images.resize(npix);
    for (size_t i = 0; i < npix; ++i) ds.images[i] = float(raw[i]) / 255.0f;

    std::ifstream labf(label_path, std::ios::binary);
    if (!labf) throw std::runtime_error(label_path + ": cannot open");
    long loff = 0;
    const uint32_t lmagic = read_be32(labf, label_path, loff);
    if (lmagic != 0x00000801u) {
        char msg[128];
        std::snprintf(msg, sizeof(msg), "%s: bad label magic 0x%08x at byte offset 0 (want 0x00000801)",
                      label_path.c_str(), lmagic);
        throw std::runtime_error(msg);
    }
    const uint32_t ln = read_be32(labf, label_path, loff);
    if (ln != n)
        throw std::runtime_error(label_path + ": label count " + std::to_string(ln) +
                                 " does not match image count " + std::to_string(n));
    std::vector<unsigned char> lraw(ln);
    labf.read(reinterpret_cast<char*>(lraw.data()), std::streamsize(ln));
    if (size_t(labf.gcount()) != ln)
        throw std::runtime_error(label_path + ": truncated label payload at byte offset " +
                                 std::to_string(loff + labf.gcount()));
    ds.labels.resize(ln);
    int maxl = 0;
    for (size_t i = 0; i < ln; ++i) {
        ds.labels[i] = int(lraw[i]);
        maxl = std::max(maxl, ds.labels[i]);
    }
    ds.num_classes = maxl + 1;
    return ds;
}

namespace {

constexpr int kSide = 32;

// per-pixel membership test for the class's geometric primitive
bool in_shape(int cls, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (cls % 10) {
        case 0: return dx * dx + dy * dy <= r * r;                                  // disc
        case 1: return ax <= r * 0.8 && ay <= r * 0.8;                              // square
        case 2: return ay <= r * 0.8 && dy >= -r * 0.8 && ax <= (dy + r * 0.8) * 0.6;  // triangle
        case 3: return (ax <= r * 0.3 && ay <= r) || (ay <= r * 0.3 && ax <= r);    // plus
        case 4: return std::abs(ax - ay) <= r * 0.3 && std::max(ax, ay) <= r;       // X
        case 5: {                                                                   // ring
            const double rr = dx * dx + dy * dy;
            return rr <= r * r && rr >= r * r * 0.3;
        }
        case 6: return ay <= r * 0.35 && ax <= r;                                   // horizontal bar
        case 7: return ax <= r * 0.35 && ay <= r;                                   // vertical bar
        case 8: return ax + ay <= r;                                                // diamond
        default: {                                                                  // square frame
            const double mx = std::max(ax, ay);
            return mx <= r * 0.9 && mx >= r * 0.5;
        }
    }
}

}  // namespace

Dataset synthetic_dataset(int n, int classes, uint64_t seed) {
    if (n <= 0 || classes < 2) throw std::invalid_argument("synthetic_dataset: need n > 0, classes >= 2");
    Dataset ds;
    ds.n = n;
    ds.c = 3;
    ds.h = kSide;
    ds.w = kSide;
    ds.num_classes = classes;
    ds.images.resize(size_t(n) * 3 * kSide * kSide);
    ds.labels.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, "synthetic", uint64_t(i));
        const int cls = i % classes;  // balanced within +-1 by construction
        ds.labels[size_t(i)] = cls;
        // muted gradient background, bright shape
        float bg_top[3], bg_bot[3], fg[3];
        for (int c = 0; c < 3; ++c) bg_top[c] = float(rng.uniform(0.10, 0.45));
        for (int c = 0; c < 3; ++c) bg_bot[c] = float(rng.uniform(0.10, 0.45));
        for (int c = 0; c < 3; ++c) fg[c] = float(rng.uniform(0.55, 0.95));
        const double cx = 15.5 + rng.uniform(-4.0, 4.0);
        const double cy = 15.5 + rng.uniform(-4.0, 4.0);
        const double r = rng.uniform(6.0, 10.0);
        float* img = ds.images.data() + size_t(i) * 3 * kSide * kSide;
        for (int y = 0; y < kSide; ++y) {
            const float t = float(y) / float(kSide - 1);
            for (int x = 0; x < kSide; ++x) {
                const bool inside = in_shape(cls, x - cx, y - cy, r);
                for (int c = 0; c < 3; ++c) {
                    const float bg = bg_top[c] + t * (bg_bot[c] - bg_top[c]);
                    img[(c * kSide + y) * kSide + x] = inside ? fg[c] : bg;
                }
            }
        }
    }
    return ds;
}

}  // namespace dat
