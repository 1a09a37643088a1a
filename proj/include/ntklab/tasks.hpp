#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntklab/dataset.hpp"
#include "ntklab/spectral.hpp"
#include "ntklab/types.hpp"

namespace ntk {

struct IdxOptions {
    std::set<int> classes;       // empty keeps every class
    std::size_t downsample = 0;  // target side length; 0 keeps the original size
    bool center = true;          // subtract the per-pixel dataset mean
    std::size_t limit = 0;       // keep at most this many samples after filtering; 0 = all
};

// Reads an IDX image file (magic 0x00000803) and its label file (0x00000801).
// Pixels are scaled to [0,1], average-pooled to downsample x downsample when
// requested, filtered by class and optionally mean-centred. Source class ids
// are kept on the dataset; labels stay unset.
Dataset load_idx_images(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        const IdxOptions& options = {});

// i.i.d. N(0, I_d) rows.
Dataset synth_gaussian(std::size_t d, std::size_t m, std::uint64_t seed);

// +1 for samples whose class id is in `positive_classes`, -1 otherwise.
Dataset class_group_labels(const Dataset& dataset, const std::set<int>& positive_classes);

// x = epsilon * y * u + w, y uniform on {-1, +1}, w ~ N(0, sigma (I - u u^T)).
Dataset linear_task(VectorRef u, double epsilon, double sigma, std::size_t m, std::uint64_t seed);

// Labels sign(phi_j) from an eigensystem computed on exactly these samples.
Dataset label_with_eigenfunction(const Dataset& dataset, const EigenSystem& eig, std::size_t j);

struct Split {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

// Disjoint seed-deterministic train/test subsets.
Split split(const Dataset& dataset, std::size_t train_m, std::size_t test_m, std::uint64_t seed);

enum class Generator { eigenfunction, class_group, linear_nad, gaussian };

std::string to_string(Generator g);
Generator generator_from_string(const std::string& name);

struct TaskSpec {
    Generator generator = Generator::gaussian;
    nlohmann::json parameters = nlohmann::json::object();
    std::size_t train_m = 0;
    std::size_t test_m = 0;
    std::uint64_t seed = 0;

    void validate(std::size_t available) const;
    nlohmann::json to_json() const;
    static TaskSpec from_json(const nlohmann::json& j);
};

}  // namespace ntk
