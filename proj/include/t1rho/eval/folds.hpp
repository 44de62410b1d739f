#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "t1rho/error.hpp"

namespace t1rho::eval {

/// Subject-level k-fold partition.
struct FoldPlan {
    int n_folds = 5;
    std::uint64_t seed = 0;
    std::vector<std::string> subjects;
    std::vector<int> fold_of; // parallel to subjects

    std::vector<std::string> test_subjects(int fold) const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < subjects.size(); ++i)
            if (fold_of[i] == fold) out.push_back(subjects[i]);
        return out;
    }
    std::vector<std::string> train_subjects(int fold) const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < subjects.size(); ++i)
            if (fold_of[i] != fold) out.push_back(subjects[i]);
        return out;
    }
    int fold(const std::string& subject) const {
        const auto it = std::find(subjects.begin(), subjects.end(), subject);
        require(it != subjects.end(), "unknown subject " + subject);
        return fold_of[std::size_t(it - subjects.begin())];
    }
    std::vector<std::size_t> fold_sizes() const {
        std::vector<std::size_t> out(std::size_t(n_folds), 0);
        for (int f : fold_of) ++out[std::size_t(f)];
        return out;
    }
};

/// Shuffles subjects with the seed and deals them round-robin, so fold sizes
/// differ by at most one and lower-numbered folds take the remainder.
inline FoldPlan make_folds(const std::vector<std::string>& subject_ids, std::uint64_t seed, int n_folds = 5) {
    require(n_folds >= 2, "need at least two folds");
    require(int(subject_ids.size()) >= n_folds,
            "need at least " + std::to_string(n_folds) + " subjects, got " + std::to_string(subject_ids.size()));
    std::vector<std::size_t> order(subject_ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = std::size_t(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    FoldPlan plan{n_folds, seed, subject_ids, std::vector<int>(subject_ids.size(), 0)};
    for (std::size_t k = 0; k < order.size(); ++k) plan.fold_of[order[k]] = int(k % std::size_t(n_folds));
    return plan;
}

} // namespace t1rho::eval
