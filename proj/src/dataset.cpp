#include "ntklab/dataset.hpp"

#include <cmath>
#include <fstream>

#include "ntklab/binio.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"

namespace ntk {

std::string Dataset::fingerprint() const { return fingerprint_samples(samples); }

std::string fingerprint_samples(const RowMatrix& samples) {
    Sha256 h;
    h.update(static_cast<std::uint64_t>(samples.rows()));
    h.update(static_cast<std::uint64_t>(samples.cols()));
    h.update(std::span<const double>(samples.data(), static_cast<std::size_t>(samples.size())));
    return h.hex().substr(0, 16);
}

void Dataset::validate() const {
    if (!samples.allFinite()) throw DataError("dataset contains non-finite samples");
    if (labels) {
        if (static_cast<std::size_t>(labels->size()) != size()) throw DataError("label vector length differs from sample count");
        for (double y : *labels)
            if (y != 1.0 && y != -1.0) throw DataError("labels must be +1 or -1");
    }
    if (!class_ids.empty() && class_ids.size() != size()) throw DataError("class id count differs from sample count");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.samples.resize(static_cast<Eigen::Index>(rows.size()), samples.cols());
    if (labels) out.labels = Vector(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= size()) throw DimensionError("subset row out of range");
        const auto src = static_cast<Eigen::Index>(rows[r]);
        out.samples.row(static_cast<Eigen::Index>(r)) = samples.row(src);
        if (labels) (*out.labels)[static_cast<Eigen::Index>(r)] = (*labels)[src];
        if (!class_ids.empty()) out.class_ids.push_back(class_ids[rows[r]]);
    }
    out.provenance = provenance;
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    ds.validate();
    const auto m = static_cast<Eigen::Index>(ds.size());
    const auto d = static_cast<Eigen::Index>(ds.dim());
    Matrix table(m, d + 2);
    table.leftCols(d) = ds.samples;
    for (Eigen::Index i = 0; i < m; ++i) {
        table(i, d) = ds.labels ? (*ds.labels)[i] : 0.0;
        table(i, d + 1) = ds.class_ids.empty() ? -1.0 : static_cast<double>(ds.class_ids[static_cast<std::size_t>(i)]);
    }
    binio::write_rect(path, "NTKD", table);
    nlohmann::json side;
    side["m"] = ds.size();
    side["d"] = ds.dim();
    side["labeled"] = ds.labeled();
    side["has_class_ids"] = !ds.class_ids.empty();
    side["fingerprint"] = ds.fingerprint();
    side["provenance"] = ds.provenance;
    std::ofstream(path.string() + ".json") << side.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
    const Matrix table = binio::read_rect(path, "NTKD");
    std::ifstream side_in(path.string() + ".json");
    if (!side_in) throw DataError("missing dataset sidecar " + path.string() + ".json");
    nlohmann::json side;
    try {
        side_in >> side;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt dataset sidecar: " + std::string(e.what()));
    }
    if (table.cols() < 2) throw DataError("dataset table too narrow");
    const auto d = table.cols() - 2;
    Dataset ds;
    ds.samples = table.leftCols(d);
    if (side.value("labeled", false)) ds.labels = table.col(d);
    if (side.value("has_class_ids", false)) {
        for (Eigen::Index i = 0; i < table.rows(); ++i) ds.class_ids.push_back(static_cast<int>(table(i, d + 1)));
    }
    ds.provenance = side.value("provenance", nlohmann::json::object());
    ds.validate();
    if (side.contains("fingerprint") && side["fingerprint"] != ds.fingerprint())
        throw DataError("dataset fingerprint mismatch for " + path.string());
    return ds;
}

}  // namespace ntk
