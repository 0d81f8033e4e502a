#pragma once

#include "dat/classifier.hpp"
#include "dat/tensor.hpp"

namespace dat {

// Pearson correlation; rejects length mismatch, n < 2, and constant inputs.
double pcc(const std::vector<double>& a, const std::vector<double>& b);

struct PccHistogram {
    std::vector<double> edges;  // bins + 1 ascending edges over [-1,1]
    std::vector<int> counts;
};

PccHistogram pcc_histogram(const std::vector<double>& values, int bins);

// Per-channel PCC between the last-BN batch statistics of two inputs
// (batch over the spatial-and-sample axis). First = means, second = variances.
std::pair<double, double> bn_statistic_pcc(ClassifierModel<float>& model,
                                           const Tensor<float>& x_a, const Tensor<float>& x_b);

// Distinct (r,g,b) tuples after quantizing each channel to `levels` values.
long color_count(const Tensor<float>& image, int levels = 256);

// Mean squared magnitude of the 2D DFT per radial frequency band, summed over
// channels, normalized so the bands sum to the image's total squared energy.
std::vector<double> radial_frequency_profile(const Tensor<float>& image, int bands);

// Cosine similarity between two same-shaped tensors; rejects zero vectors.
double gradient_alignment(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace dat
