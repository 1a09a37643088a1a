#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntklab/csv.hpp"
#include "ntklab/dataset.hpp"
#include "ntklab/netcore.hpp"

namespace ntk::exp {

inline constexpr const char* kToolVersion = "ntklab 1.0.0";

// Read-only view of a JSON config that remembers where it came from, so every
// schema error names the offending field ("$.train.batch_size: ...").
class Node {
public:
    Node(const nlohmann::json& j, std::string path) : j_(&j), path_(std::move(path)) {}

    const nlohmann::json& raw() const { return *j_; }
    const std::string& path() const { return path_; }
    bool has(const std::string& key) const;
    Node at(const std::string& key) const;
    Node at(std::size_t index) const;
    std::size_t size() const;

    template <class T>
    T get() const;
    template <class T>
    T req(const std::string& key) const { return at(key).get<T>(); }
    template <class T>
    T opt(const std::string& key, T fallback) const { return has(key) ? at(key).get<T>() : fallback; }

    // Rejects keys outside `allowed`; requires an object.
    void allow(const std::vector<std::string>& allowed) const;
    [[noreturn]] void fail(const std::string& what) const;

private:
    const nlohmann::json* j_;
    std::string path_;
};

template <> bool Node::get<bool>() const;
template <> std::uint64_t Node::get<std::uint64_t>() const;
template <> int Node::get<int>() const;
template <> double Node::get<double>() const;
template <> std::string Node::get<std::string>() const;
template <> std::vector<std::size_t> Node::get<std::vector<std::size_t>>() const;
template <> std::vector<int> Node::get<std::vector<int>>() const;
template <> std::vector<double> Node::get<std::vector<double>>() const;

// Output directory for a config: `override_dir` when set, else the config's
// "output_dir" resolved against NTKLAB_OUTPUT_ROOT (if set) or the cwd.
std::filesystem::path resolve_output_dir(const nlohmann::json& config, const std::filesystem::path& override_dir);

NetworkSpec parse_network(const Node& n);
Dataset build_dataset(const Node& n, const std::filesystem::path& base_dir);

// Runs one experiment template, writes its outputs and manifest.json under the
// output directory and returns the manifest. On failure a manifest with
// status "failed" and the outputs written so far is left behind and the error
// is rethrown. Relative input paths resolve against `base_dir`.
nlohmann::json run(const nlohmann::json& config, const std::filesystem::path& base_dir = {},
                   const std::filesystem::path& output_override = {});
nlohmann::json run_file(const std::filesystem::path& config_file, const std::filesystem::path& output_override = {});

struct Report {
    std::string experiment;
    csv::Table table;
    nlohmann::json statistics = nlohmann::json::object();
};

// Figure-shaped summary of a finished run. Accepts a manifest path or its
// directory; verifies every listed output hash first.
Report report(const std::filesystem::path& manifest_or_dir);

}  // namespace ntk::exp
