#include "cft/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace cft {

namespace {
constexpr int kFormatVersion = 1;
}

Tensor& ParamSet::add(const std::string& name, Tensor t) {
    if (contains(name)) throw TensorError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    entries_.push_back({name, std::move(t)});
    return entries_.back().tensor;
}

Tensor& ParamSet::get(const std::string& name) {
    for (auto& e : entries_)
        if (e.name == name) return e.tensor;
    throw TensorError("unknown parameter: " + name);
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.tensor;
    throw TensorError("unknown parameter: " + name);
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

int64_t ParamSet::total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

void ParamSet::zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::save(const std::string& path) const {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& e : entries_) {
        nlohmann::json t;
        t["name"] = e.name;
        t["shape"] = e.tensor.shape();
        t["data"] = e.tensor.values();
        tensors.push_back(std::move(t));
    }
    j["tensors"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw TensorError("cannot open checkpoint for writing: " + path);
    out << j.dump();
    out << "\n";
}

void ParamSet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    if (!j.contains("format_version") || j["format_version"].get<int>() != kFormatVersion)
        throw TensorError("unsupported checkpoint format version in " + path);
    size_t loaded = 0;
    for (const auto& t : j["tensors"]) {
        const std::string name = t["name"].get<std::string>();
        Tensor& dst = get(name);
        const Shape shape = t["shape"].get<Shape>();
        if (shape != dst.shape())
            throw TensorError("checkpoint shape mismatch for " + name + ": file has " + shape_str(shape) +
                              ", model has " + shape_str(dst.shape()));
        std::vector<double> data = t["data"].get<std::vector<double>>();
        dst.mutable_values() = std::move(data);
        ++loaded;
    }
    if (loaded != entries_.size())
        throw TensorError("checkpoint is missing parameters: has " + std::to_string(loaded) + ", model needs " +
                          std::to_string(entries_.size()));
}

}  // namespace cft
