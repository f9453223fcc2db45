#pragma once

// Named parameter storage plus the Adam update. One optimizer instance owns
// the moment estimates for one parameter set; the step counter is shared
// across the set (one call to step() = one optimization step).

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsdr/matrix.hpp"

namespace tsdr::ad {

struct ParamStore {
    std::vector<std::string> names;
    std::vector<Matrix> values;

    std::size_t add(std::string name, Matrix m) {
        names.push_back(std::move(name));
        values.push_back(std::move(m));
        return values.size() - 1;
    }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
    }

    Matrix& operator[](std::size_t i) { return values[i]; }
    const Matrix& operator[](std::size_t i) const { return values[i]; }
    std::size_t size() const { return values.size(); }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const Matrix& m : values) n += m.size();
        return n;
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(const ParamStore& params, AdamConfig cfg = {});

    // grads[i] pairs with params.values[i]; an empty matrix means zero
    // gradient (moments still decay). Non-finite gradients are a hard error
    // naming the parameter.
    void step(ParamStore& params, const std::vector<const Matrix*>& grads, double lr);

    std::int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::int64_t t_ = 0;
};

} // namespace tsdr::ad
