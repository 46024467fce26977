#include "xit/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace xit::data {

namespace fs = std::filesystem;

int64_t Dataset::max_length() const {
    int64_t m = 0;
    for (const auto& s : series) m = std::max(m, s.length());
    return m;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == '\t' || ch == ',' || ch == ' ' || ch == '\r') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double parse_number(const std::string& tok, const std::string& path, size_t row) {
    size_t pos = 0;
    double v;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error(path + ": row " + std::to_string(row) + ": not a number: '" + tok + "'");
    }
    if (pos != tok.size())
        throw std::runtime_error(path + ": row " + std::to_string(row) + ": trailing junk in '" + tok + "'");
    if (!std::isfinite(v))
        throw std::runtime_error(path + ": row " + std::to_string(row) + ": non-finite value '" + tok + "'");
    return v;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);

    Dataset ds;
    ds.name = fs::path(path).stem().string();
    if (ds.name.size() > 6 && ds.name.substr(ds.name.size() - 6) == "_TRAIN") {
        ds.split = "train";
        ds.name.resize(ds.name.size() - 6);
    } else if (ds.name.size() > 5 && ds.name.substr(ds.name.size() - 5) == "_TEST") {
        ds.split = "test";
        ds.name.resize(ds.name.size() - 5);
    }

    std::vector<long long> raw_labels;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto fields = split_fields(line);
        if (fields.empty()) continue;
        if (fields.size() < 2)
            throw std::runtime_error(path + ": row " + std::to_string(row) + ": needs a label and at least one value");
        const double lab = parse_number(fields[0], path, row);
        if (std::abs(lab - std::llround(lab)) > 1e-9)
            throw std::runtime_error(path + ": row " + std::to_string(row) + ": label must be an integer, got '" +
                                     fields[0] + "'");
        TimeSeries ts;
        ts.values.reserve(fields.size() - 1);
        for (size_t i = 1; i < fields.size(); ++i)
            ts.values.push_back(static_cast<float>(parse_number(fields[i], path, row)));
        raw_labels.push_back(std::llround(lab));
        ds.series.push_back(std::move(ts));
    }
    if (ds.series.empty()) throw std::runtime_error("empty dataset file: " + path);

    std::set<long long> distinct(raw_labels.begin(), raw_labels.end());
    std::map<long long, int> remap;
    int next = 0;
    for (long long l : distinct) remap[l] = next++;
    for (size_t i = 0; i < ds.series.size(); ++i) ds.series[i].label = remap[raw_labels[i]];
    ds.num_classes = next;
    return ds;
}

TimeSeries prepad(const TimeSeries& series, int64_t target_len) {
    if (series.values.empty()) throw std::invalid_argument("prepad: empty series");
    if (target_len < series.length())
        throw std::invalid_argument("prepad: target length " + std::to_string(target_len) +
                                    " shorter than series length " + std::to_string(series.length()));
    TimeSeries out;
    out.label = series.label;
    out.values.assign(static_cast<size_t>(target_len - series.length()), 0.0f);
    out.values.insert(out.values.end(), series.values.begin(), series.values.end());
    return out;
}

TimeSeries first_variate(const std::vector<std::vector<float>>& variates) {
    if (variates.empty()) throw std::invalid_argument("first_variate: no variates");
    TimeSeries out;
    out.values = variates.front();
    return out;
}

Collection build_collection(std::vector<Dataset> datasets, const CollectionOptions& opts) {
    if (datasets.empty()) throw std::invalid_argument("build_collection: no datasets");
    if (opts.max_length > 0) {
        std::vector<Dataset> kept;
        for (auto& d : datasets)
            if (d.max_length() <= opts.max_length) kept.push_back(std::move(d));
        if (kept.empty())
            throw std::runtime_error("build_collection: max_length " + std::to_string(opts.max_length) +
                                     " excludes every dataset");
        datasets = std::move(kept);
    }

    Collection col;
    col.target_length = 0;
    for (const auto& d : datasets) {
        if (d.series.empty()) throw std::invalid_argument("build_collection: dataset '" + d.name + "' is empty");
        col.target_length = std::max(col.target_length, d.max_length());
    }

    std::map<std::string, int64_t> domain_sizes;
    for (const auto& d : datasets) domain_sizes[d.domain] += d.size();
    const double domain_weight = 1.0 / static_cast<double>(domain_sizes.size());

    col.sampling_weights.reserve(datasets.size());
    for (auto& d : datasets) {
        col.sampling_weights.push_back(domain_weight * static_cast<double>(d.size()) /
                                       static_cast<double>(domain_sizes[d.domain]));
        for (auto& s : d.series) s = prepad(s, col.target_length);
        col.datasets.push_back(std::move(d));
    }
    return col;
}

Collection load_collection_manifest(const std::string& path, const CollectionOptions& opts) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open collection manifest: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("collection manifest " + path + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("datasets") || !doc["datasets"].is_array())
        throw std::runtime_error("collection manifest " + path + ": expected {\"datasets\": [...]}");
    for (const auto& [key, _] : doc.items())
        if (key != "datasets")
            throw std::runtime_error("collection manifest " + path + ": unknown key '" + key + "'");

    const fs::path base = fs::path(path).parent_path();
    std::vector<Dataset> datasets;
    for (const auto& entry : doc["datasets"]) {
        if (!entry.is_object() || !entry.contains("path"))
            throw std::runtime_error("collection manifest " + path + ": each dataset needs a 'path'");
        for (const auto& [key, _] : entry.items())
            if (key != "path" && key != "domain" && key != "name" && key != "split")
                throw std::runtime_error("collection manifest " + path + ": unknown dataset key '" + key + "'");
        fs::path p = entry["path"].get<std::string>();
        if (p.is_relative()) p = base / p;
        Dataset d = load_dataset(p.string());
        if (entry.contains("domain")) d.domain = entry["domain"].get<std::string>();
        if (entry.contains("name")) d.name = entry["name"].get<std::string>();
        if (entry.contains("split")) d.split = entry["split"].get<std::string>();
        datasets.push_back(std::move(d));
    }
    return build_collection(std::move(datasets), opts);
}

std::vector<BatchItem> sample_batch(const Collection& collection, int batch_size, Rng& rng) {
    if (batch_size < 2) throw std::invalid_argument("sample_batch: batch size must be >= 2");
    if (collection.datasets.empty()) throw std::invalid_argument("sample_batch: empty collection");
    std::vector<BatchItem> out;
    out.reserve(static_cast<size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        const double u = rng.uniform();
        double acc = 0.0;
        size_t di = collection.datasets.size() - 1;
        for (size_t i = 0; i < collection.sampling_weights.size(); ++i) {
            acc += collection.sampling_weights[i];
            if (u < acc) {
                di = i;
                break;
            }
        }
        const auto& ds = collection.datasets[di];
        const int si = static_cast<int>(rng.uniform_int(ds.size()));
        out.push_back({static_cast<int>(di), si, &ds.series[static_cast<size_t>(si)]});
    }
    return out;
}

}  // namespace xit::data
