#pragma once

#include <string>
#include <vector>

#include "cft/tensor.hpp"

namespace cft {

// Ordered registry of named trainable tensors. Registration order is the
// serialization order, so identical construction yields identical files.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    struct Entry {
        std::string name;
        Tensor tensor;
    };
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    int64_t total_elements() const;

    void zero_grads();

    // versioned JSON checkpoint of named tensors with shapes
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    std::vector<Entry> entries_;
};

}  // namespace cft
