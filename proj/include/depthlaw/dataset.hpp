#pragma once

#include <vector>

#include "depthlaw/loss.hpp"
#include "depthlaw/model.hpp"
#include "depthlaw/rng.hpp"

namespace depthlaw {

struct SynthDataset {
    std::vector<Vec> x;
    std::vector<int> label;
    int classes = 0;
    uint64_t seed = 0;

    size_t size() const { return x.size(); }
};

// How class signal is laid out in the flat input vector. Dense inputs put the
// class mean on a single coordinate axis; conv inputs spread it uniformly
// over the sites of one channel (so pooling heads and translation-equivariant
// stacks see it); token inputs spread it over tokens on one feature.
struct InputShape {
    enum class Kind { flat, channel_sites, token_features };
    Kind kind = Kind::flat;
    int groups = 1;     // channels or features carrying class signal
    int per_group = 1;  // sites or tokens per group

    int dim() const { return groups * per_group; }

    static InputShape of(const ArchSpec& spec) {
        InputShape s;
        switch (spec.family) {
            case Family::mlp:
                s = {Kind::flat, spec.width, 1};
                break;
            case Family::cnn1d:
            case Family::cnn2d:
                s = {Kind::channel_sites, spec.channels, spec.grid_sites()};
                break;
            case Family::resnet:
                if (spec.residual_branch == ResidualBranch::conv)
                    s = {Kind::channel_sites, spec.channels, spec.grid_sites()};
                else
                    s = {Kind::flat, spec.width, 1};
                break;
            case Family::transformer:
                s = {Kind::token_features, spec.width, spec.tokens};
                break;
        }
        return s;
    }
};

// Gaussian class clusters with means at pairwise distance >= separation.
// Class c shifts group (c mod groups); stacking classes past the group count
// scales the shift up so distances stay >= separation. Balanced classes
// (counts differ by at most one), deterministic Fisher-Yates shuffle.
inline SynthDataset synth_classification(int n, const InputShape& shape,
                                         int classes, double separation,
                                         uint64_t seed) {
    if (classes < 2 || n < classes)
        throw DomainError("synth_classification: need n >= classes >= 2");
    if (shape.dim() < 1) throw DomainError("synth_classification: empty input");
    SynthDataset ds;
    ds.classes = classes;
    ds.seed = seed;
    Rng rng = Rng(seed).fork("synth");
    const int base = n / classes, extra = n % classes;
    const double unit = separation / std::sqrt(double(shape.per_group));
    for (int c = 0; c < classes; ++c) {
        const int count = base + (c < extra ? 1 : 0);
        const int group = c % shape.groups;
        const double shift = unit * double(1 + c / shape.groups);
        for (int i = 0; i < count; ++i) {
            Vec x(shape.dim());
            for (auto& e : x) e = rng.normal();
            if (shape.kind == InputShape::Kind::token_features) {
                for (int t = 0; t < shape.per_group; ++t)
                    x[size_t(t) * shape.groups + group] += shift;
            } else {
                for (int p = 0; p < shape.per_group; ++p)
                    x[size_t(group) * shape.per_group + p] += shift;
            }
            ds.x.push_back(std::move(x));
            ds.label.push_back(c);
        }
    }
    for (size_t i = ds.size(); i > 1; --i) {
        const size_t j = rng.below(i);
        std::swap(ds.x[i - 1], ds.x[j]);
        std::swap(ds.label[i - 1], ds.label[j]);
    }
    return ds;
}

inline SynthDataset synth_classification(int n, int input_dim, int classes,
                                         double separation, uint64_t seed) {
    return synth_classification(n, InputShape{InputShape::Kind::flat, input_dim, 1},
                                classes, separation, seed);
}

// Assembles a minibatch; MSE targets are one-hot class vectors.
inline Batch make_batch(const SynthDataset& ds, const std::vector<int>& idx,
                        const LossSpec& loss) {
    Batch b;
    for (int i : idx) {
        b.x.push_back(ds.x[i]);
        Vec y(loss.output_dim, 0.0);
        if (ds.label[i] < loss.output_dim) y[ds.label[i]] = 1.0;
        b.y.push_back(std::move(y));
        b.label.push_back(ds.label[i]);
    }
    return b;
}

}  // namespace depthlaw
