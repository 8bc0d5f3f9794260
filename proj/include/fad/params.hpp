#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fad/tensor.hpp"

namespace fad::nn {

// Insertion-ordered, name-addressed parameter collection. Parameter addresses
// stay stable for the lifetime of the store, so modules keep raw pointers.
template <typename T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value) {
        require(!index_.count(name), "duplicate parameter name " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::make_unique<Parameter<T>>(std::move(value))});
        return *entries_.back().param;
    }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter " + name);
        return *entries_[it->second].param;
    }
    const Parameter<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter " + name);
        return *entries_[it->second].param;
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].name; }
    Parameter<T>& at(std::size_t i) { return *entries_[i].param; }
    const Parameter<T>& at(std::size_t i) const { return *entries_[i].param; }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.param->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.param->zero_grad();
    }

    std::vector<Parameter<T>*> pointers() {
        std::vector<Parameter<T>*> out;
        for (auto& e : entries_) out.push_back(e.param.get());
        return out;
    }

private:
    struct Entry {
        std::string name;
        std::unique_ptr<Parameter<T>> param;
    };
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv/dense layers.
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
    return t;
}

} // namespace fad::nn
