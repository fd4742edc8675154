#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "partialfl/errors.hpp"
#include "partialfl/tensor.hpp"

namespace partialfl {

struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<long> counts;  // rows = true class, cols = predicted

    static ConfusionMatrix from_predictions(const std::vector<int>& predictions,
                                            const std::vector<int>& labels,
                                            std::size_t num_classes) {
        if (predictions.size() != labels.size())
            throw ValueError("ConfusionMatrix: prediction/label length mismatch");
        ConfusionMatrix cm;
        cm.num_classes = num_classes;
        cm.counts.assign(num_classes * num_classes, 0);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int t = labels[i];
            const int p = predictions[i];
            if (t < 0 || static_cast<std::size_t>(t) >= num_classes || p < 0 ||
                static_cast<std::size_t>(p) >= num_classes)
                throw ValueError("ConfusionMatrix: class index out of range at sample " +
                                 std::to_string(i));
            ++cm.counts[static_cast<std::size_t>(t) * num_classes + static_cast<std::size_t>(p)];
        }
        return cm;
    }

    long at(std::size_t true_class, std::size_t predicted) const {
        return counts[true_class * num_classes + predicted];
    }

    long total() const {
        long sum = 0;
        for (long c : counts) sum += c;
        return sum;
    }
};

// Unweighted average recall: mean of per-class recalls over the classes that
// actually occur in the labels (absent classes are excluded, not counted as
// zero).
inline double uar(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (labels.empty()) throw ValueError("uar: empty input");
    if (predictions.size() != labels.size())
        throw ValueError("uar: prediction/label length mismatch");
    int max_class = 0;
    for (int y : labels) max_class = std::max(max_class, y);
    for (int p : predictions) max_class = std::max(max_class, p);
    const std::size_t classes = static_cast<std::size_t>(max_class) + 1;
    ConfusionMatrix cm = ConfusionMatrix::from_predictions(predictions, labels, classes);

    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        long support = 0;
        for (std::size_t p = 0; p < classes; ++p) support += cm.at(c, p);
        if (support == 0) continue;
        recall_sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
        ++present;
    }
    return recall_sum / static_cast<double>(present);
}

// Fraction of samples whose true label ranks among the k largest logits.
// Ties rank the lower class index first, so the result is deterministic.
inline double top_k_accuracy(const Tensor& logits, const std::vector<int>& labels,
                             std::size_t k) {
    if (logits.rank() != 2) throw ShapeError("top_k_accuracy: logits must be rank 2");
    const std::size_t batch = logits.rows();
    const std::size_t classes = logits.cols();
    if (batch == 0) throw ValueError("top_k_accuracy: empty input");
    if (labels.size() != batch) throw ValueError("top_k_accuracy: label length mismatch");
    if (k < 1 || k > classes)
        throw ValueError("top_k_accuracy: k=" + std::to_string(k) + " out of range [1, " +
                         std::to_string(classes) + "]");

    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw ValueError("top_k_accuracy: label out of range at sample " + std::to_string(i));
        const double* row = logits.row_ptr(i);
        const double true_logit = row[static_cast<std::size_t>(y)];
        // Rank of the true label under (logit desc, index asc) ordering.
        std::size_t rank = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (c == static_cast<std::size_t>(y)) continue;
            if (row[c] > true_logit || (row[c] == true_logit && c < static_cast<std::size_t>(y)))
                ++rank;
        }
        if (rank < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch);
}

inline std::vector<int> argmax_predictions(const Tensor& logits) {
    std::vector<int> preds(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* row = logits.row_ptr(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (row[c] > row[best]) best = c;
        preds[i] = static_cast<int>(best);
    }
    return preds;
}

}  // namespace partialfl
