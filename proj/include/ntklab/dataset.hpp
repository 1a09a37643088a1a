#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntklab/types.hpp"

namespace ntk {

// Samples (one per row), optional +-1 labels, optional source class ids and a
// provenance record naming the generator and its parameters.
struct Dataset {
    RowMatrix samples;
    std::optional<Vector> labels;
    std::vector<int> class_ids;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(samples.cols()); }
    bool labeled() const { return labels.has_value(); }

    // Hash of the sample matrix only; labels do not change it.
    std::string fingerprint() const;
    void validate() const;

    Dataset subset(const std::vector<std::size_t>& rows) const;
};

std::string fingerprint_samples(const RowMatrix& samples);

// "NTKD" rectangular matrix (m x (d + 2)): sample columns, then the label
// column (0 when unlabeled) and the class id column (-1 when absent), plus a
// JSON sidecar <path>.json holding provenance and fingerprints.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ntk
