#include "dat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>
#include <stdexcept>

namespace dat {

double pcc(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("pcc: length mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    const size_t n = a.size();
    if (n < 2) throw std::invalid_argument("pcc: need at least 2 points");
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa == 0 || sbb == 0)
        throw std::invalid_argument("pcc: undefined for a constant input");
    return sab / std::sqrt(saa * sbb);
}

PccHistogram pcc_histogram(const std::vector<double>& values, int bins) {
    if (bins < 1) throw std::invalid_argument("pcc_histogram: bins must be >= 1");
    PccHistogram h;
    h.counts.assign(size_t(bins), 0);
    for (int i = 0; i <= bins; ++i) h.edges.push_back(-1.0 + 2.0 * i / bins);
    for (double v : values) {
        if (v < -1.0 || v > 1.0)
            throw std::invalid_argument("pcc_histogram: value outside [-1,1]");
        int b = int((v + 1.0) / 2.0 * bins);
        if (b == bins) b = bins - 1;  // v == 1 lands in the top bin
        ++h.counts[size_t(b)];
    }
    return h;
}

std::pair<double, double> bn_statistic_pcc(ClassifierModel<float>& model, const Tensor<float>& x_a,
                                           const Tensor<float>& x_b) {
    auto [mean_a, var_a] = last_bn_statistics(model, x_a);
    auto [mean_b, var_b] = last_bn_statistics(model, x_b);
    std::vector<double> ma(mean_a.begin(), mean_a.end()), mb(mean_b.begin(), mean_b.end());
    std::vector<double> va(var_a.begin(), var_a.end()), vb(var_b.begin(), var_b.end());
    return {pcc(ma, mb), pcc(va, vb)};
}

long color_count(const Tensor<float>& image, int levels) {
    if (image->shape.size() != 3) throw std::invalid_argument("color_count: expected [C,H,W]");
    if (levels < 2) throw std::invalid_argument("color_count: levels must be >= 2");
    const int c = image->shape[0];
    const long hw = long(image->shape[1]) * image->shape[2];
    auto level = [&](float v) {
        int q = int(std::clamp(v, 0.0f, 1.0f) * (levels - 1) + 0.5f);
        return uint64_t(q);
    };
    std::set<uint64_t> seen;
    for (long p = 0; p < hw; ++p) {
        uint64_t key = 0;
        for (int ch = 0; ch < c; ++ch) key = key * uint64_t(levels) + level(image->value[ch * hw + p]);
        seen.insert(key);
    }
    return long(seen.size());
}

std::vector<double> radial_frequency_profile(const Tensor<float>& image, int bands) {
    if (image->shape.size() != 3)
        throw std::invalid_argument("radial_frequency_profile: expected [C,H,W]");
    if (bands < 1) throw std::invalid_argument("radial_frequency_profile: bands must be >= 1");
    const int c = image->shape[0], h = image->shape[1], w = image->shape[2];
    std::vector<double> profile(size_t(bands), 0.0);
    const double two_pi = 6.283185307179586476925286766559;
    std::vector<std::complex<double>> rows(size_t(h) * w), full(size_t(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        const float* src = image->value.data() + size_t(ch) * h * w;
        // row-column DFT
        for (int y = 0; y < h; ++y)
            for (int u = 0; u < w; ++u) {
                std::complex<double> acc(0, 0);
                for (int x = 0; x < w; ++x) {
                    const double a = -two_pi * u * x / w;
                    acc += double(src[y * w + x]) * std::complex<double>(std::cos(a), std::sin(a));
                }
                rows[size_t(y) * w + u] = acc;
            }
        for (int u = 0; u < w; ++u)
            for (int v = 0; v < h; ++v) {
                std::complex<double> acc(0, 0);
                for (int y = 0; y < h; ++y) {
                    const double a = -two_pi * v * y / h;
                    acc += rows[size_t(y) * w + u] * std::complex<double>(std::cos(a), std::sin(a));
                }
                full[size_t(v) * w + u] = acc;
            }
        // bin |F|^2 / (H*W) by radial frequency; Parseval makes the bins sum
        // to the squared pixel energy
        const double max_r = std::sqrt(double(h / 2) * (h / 2) + double(w / 2) * (w / 2));
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u) {
                const int fv = v <= h / 2 ? v : v - h;  // signed frequencies
                const int fu = u <= w / 2 ? u : u - w;
                const double r = std::sqrt(double(fv) * fv + double(fu) * fu);
                int b = max_r > 0 ? int(r / max_r * bands) : 0;
                if (b >= bands) b = bands - 1;
                profile[size_t(b)] += std::norm(full[size_t(v) * w + u]) / (double(h) * w);
            }
    }
    return profile;
}

double gradient_alignment(const Tensor<float>& a, const Tensor<float>& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("gradient_alignment: shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
    double dot = 0, na = 0, nb = 0;
    for (long i = 0; i < a->size(); ++i) {
        dot += double(a->value[i]) * b->value[i];
        na += double(a->value[i]) * a->value[i];
        nb += double(b->value[i]) * b->value[i];
    }
    if (na == 0 || nb == 0)
        throw std::invalid_argument("gradient_alignment: undefined for a zero vector");
    return dot / std::sqrt(na * nb);
}

}  // namespace dat
