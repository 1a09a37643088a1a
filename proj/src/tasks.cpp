#include "ntklab/tasks.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"
#include "ntklab/random.hpp"

namespace ntk {

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated IDX header in " + path.string());
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t bytes, const std::filesystem::path& path) {
    std::vector<unsigned char> buf(bytes);
    if (bytes > 0 && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes)))
        throw DataError("truncated IDX payload in " + path.string());
    return buf;
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        const IdxOptions& options) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError("cannot open " + images_path.string());
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError("cannot open " + labels_path.string());

    const auto img_magic = read_be32(img, images_path);
    if (img_magic != 0x00000803)
        throw DataError("bad IDX image magic in " + images_path.string() + " (expected 0x00000803)");
    const auto count = read_be32(img, images_path);
    const auto rows = read_be32(img, images_path);
    const auto cols = read_be32(img, images_path);
    if (rows == 0 || cols == 0) throw DataError("IDX image dimensions must be positive");

    const auto lab_magic = read_be32(lab, labels_path);
    if (lab_magic != 0x00000801)
        throw DataError("bad IDX label magic in " + labels_path.string() + " (expected 0x00000801)");
    const auto label_count = read_be32(lab, labels_path);
    if (label_count != count)
        throw DataError("IDX image count " + std::to_string(count) + " differs from label count " +
                        std::to_string(label_count));

    std::size_t side_r = rows;
    std::size_t side_c = cols;
    std::size_t pool_r = 1;
    std::size_t pool_c = 1;
    if (options.downsample != 0) {
        if (rows % options.downsample != 0 || cols % options.downsample != 0)
            throw ConfigError("downsample side " + std::to_string(options.downsample) + " does not divide " +
                              std::to_string(rows) + "x" + std::to_string(cols));
        side_r = side_c = options.downsample;
        pool_r = rows / options.downsample;
        pool_c = cols / options.downsample;
    }

    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    const auto raw = read_payload(img, pixels * count, images_path);
    const auto raw_labels = read_payload(lab, count, labels_path);

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < count; ++i) {
        if (options.classes.empty() || options.classes.count(raw_labels[i])) keep.push_back(i);
        if (options.limit != 0 && keep.size() == options.limit) break;
    }

    Dataset ds;
    const auto d = static_cast<Eigen::Index>(side_r * side_c);
    ds.samples = RowMatrix::Zero(static_cast<Eigen::Index>(keep.size()), d);
    const double pool_area = static_cast<double>(pool_r * pool_c);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const unsigned char* src = raw.data() + keep[k] * pixels;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const auto dst = static_cast<Eigen::Index>((r / pool_r) * side_c + c / pool_c);
                ds.samples(static_cast<Eigen::Index>(k), dst) += src[r * cols + c] / 255.0 / pool_area;
            }
        ds.class_ids.push_back(raw_labels[keep[k]]);
    }
    if (options.center && !keep.empty()) {
        const Eigen::RowVectorXd mean = ds.samples.colwise().mean();
        ds.samples.rowwise() -= mean;
    }

    std::map<int, std::size_t> per_class;
    for (int c : ds.class_ids) ++per_class[c];
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [c, n] : per_class) counts[std::to_string(c)] = n;
    ds.provenance = {{"generator", "idx_images"},
                     {"images", images_path.filename().string()},
                     {"labels", labels_path.filename().string()},
                     {"header_count", count},
                     {"source_side", {rows, cols}},
                     {"downsample", options.downsample},
                     {"centered", options.center},
                     {"classes", std::vector<int>(options.classes.begin(), options.classes.end())},
                     {"class_counts", counts}};
    ds.validate();
    return ds;
}

Dataset synth_gaussian(std::size_t d, std::size_t m, std::uint64_t seed) {
    if (d == 0 || m == 0) throw ConfigError("synth_gaussian: d and m must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Dataset ds;
    ds.samples.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < ds.samples.rows(); ++i)
        for (Eigen::Index j = 0; j < ds.samples.cols(); ++j) ds.samples(i, j) = normal(rng);
    ds.provenance = {{"generator", "gaussian"}, {"d", d}, {"m", m}, {"seed", seed}};
    return ds;
}

Dataset class_group_labels(const Dataset& dataset, const std::set<int>& positive_classes) {
    if (dataset.class_ids.empty()) throw DataError("class_group_labels: dataset carries no class ids");
    Dataset out = dataset;
    out.labels = Vector(static_cast<Eigen::Index>(dataset.size()));
    std::size_t positives = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const bool pos = positive_classes.count(dataset.class_ids[i]) != 0;
        (*out.labels)[static_cast<Eigen::Index>(i)] = pos ? 1.0 : -1.0;
        positives += pos;
    }
    out.provenance["labeling"] = {{"generator", "class_group"},
                                  {"positive_classes", std::vector<int>(positive_classes.begin(), positive_classes.end())},
                                  {"positives", positives},
                                  {"negatives", dataset.size() - positives}};
    return out;
}

Dataset linear_task(VectorRef u, double epsilon, double sigma, std::size_t m, std::uint64_t seed) {
    if (u.size() == 0) throw ConfigError("linear_task: empty direction");
    if (std::abs(u.norm() - 1.0) > 1e-8) throw ConfigError("linear_task: direction must have unit norm");
    if (!(epsilon > 0.0) || !(sigma > 0.0)) throw ConfigError("linear_task: epsilon and sigma must be positive");
    if (m == 0) throw ConfigError("linear_task: m must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const auto d = u.size();
    const double scale = std::sqrt(sigma);
    Dataset ds;
    ds.samples.resize(static_cast<Eigen::Index>(m), d);
    ds.labels = Vector(static_cast<Eigen::Index>(m));
    Vector g(d);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m); ++i) {
        const double y = (rng() >> 63) ? 1.0 : -1.0;
        for (Eigen::Index k = 0; k < d; ++k) g[k] = normal(rng);
        g -= u.dot(g) * u;
        ds.samples.row(i) = (epsilon * y * u + scale * g).transpose();
        (*ds.labels)[i] = y;
    }
    ds.provenance = {{"generator", "linear_nad"},
                     {"epsilon", epsilon},
                     {"sigma", sigma},
                     {"m", m},
                     {"seed", seed},
                     {"direction", std::vector<double>(u.data(), u.data() + d)}};
    return ds;
}

Dataset label_with_eigenfunction(const Dataset& dataset, const EigenSystem& eig, std::size_t j) {
    if (eig.size() != dataset.size() || eig.gram_dataset_fingerprint != dataset.fingerprint())
        throw DataError("label_with_eigenfunction: eigensystem was computed on different samples");
    Dataset out = dataset;
    out.labels = binarize_eigenfunction(eig, j);
    const auto positives = static_cast<std::size_t>((out.labels->array() > 0.0).count());
    out.provenance["labeling"] = {{"generator", "eigenfunction"},
                                  {"index", j},
                                  {"eigenvalue", eig.eigenvalues[static_cast<Eigen::Index>(j - 1)]},
                                  {"network_fingerprint", eig.gram_network_fingerprint},
                                  {"positives", positives},
                                  {"negatives", dataset.size() - positives},
                                  {"balance", static_cast<double>(positives) / static_cast<double>(dataset.size())}};
    return out;
}

Split split(const Dataset& dataset, std::size_t train_m, std::size_t test_m, std::uint64_t seed) {
    if (train_m + test_m > dataset.size())
        throw ConfigError("split: " + std::to_string(train_m) + " + " + std::to_string(test_m) +
                          " exceeds the " + std::to_string(dataset.size()) + " available samples");
    const auto perm = permutation(dataset.size(), seed);
    Split s;
    s.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(train_m));
    s.test_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(train_m),
                          perm.begin() + static_cast<std::ptrdiff_t>(train_m + test_m));
    s.train = dataset.subset(s.train_indices);
    s.test = dataset.subset(s.test_indices);
    const nlohmann::json info = {{"seed", seed}, {"train_m", train_m}, {"test_m", test_m}, {"source", dataset.fingerprint()}};
    s.train.provenance["split"] = info;
    s.train.provenance["split"]["role"] = "train";
    s.test.provenance["split"] = info;
    s.test.provenance["split"]["role"] = "test";
    return s;
}

std::string to_string(Generator g) {
    switch (g) {
        case Generator::eigenfunction: return "eigenfunction";
        case Generator::class_group: return "class_group";
        case Generator::linear_nad: return "linear_nad";
        case Generator::gaussian: return "gaussian";
    }
    return "?";
}

Generator generator_from_string(const std::string& name) {
    if (name == "eigenfunction") return Generator::eigenfunction;
    if (name == "class_group") return Generator::class_group;
    if (name == "linear_nad") return Generator::linear_nad;
    if (name == "gaussian") return Generator::gaussian;
    throw ConfigError("unknown task generator '" + name + "'");
}

void TaskSpec::validate(std::size_t available) const {
    if (train_m + test_m > available)
        throw ConfigError("task: split sizes " + std::to_string(train_m) + " + " + std::to_string(test_m) +
                          " exceed " + std::to_string(available) + " available samples");
}

nlohmann::json TaskSpec::to_json() const {
    return {{"generator", to_string(generator)},
            {"parameters", parameters},
            {"train_m", train_m},
            {"test_m", test_m},
            {"seed", seed}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
    TaskSpec t;
    try {
        t.generator = generator_from_string(j.at("generator").get<std::string>());
        t.parameters = j.value("parameters", nlohmann::json::object());
        t.train_m = j.value("train_m", std::size_t{0});
        t.test_m = j.value("test_m", std::size_t{0});
        t.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("task: ") + e.what());
    }
    return t;
}

}  // namespace ntk
