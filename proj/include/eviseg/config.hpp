#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "eviseg/backbone.hpp"
#include "eviseg/datagen.hpp"
#include "eviseg/losses.hpp"

namespace eviseg {

// Raised for malformed or invalid configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised for missing or corrupt inputs on disk (CLI exit code 3).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Merged run configuration, parsed from a flat "section.key = value" text
// file ('#' starts a comment). Unknown keys and bad values fail with
// file:line diagnostics.
struct RunConfig {
    std::uint64_t seed = 0;

    // data.*
    std::size_t height = 32, width = 32, classes = 2;
    std::string family = "blobs";
    double fg_min = 0.05, fg_max = 0.35, texture = 0.3;
    std::size_t train_count = 200, val_count = 20, test_count = 40, ood_count = 0;
    std::string ood_family = "rings";
    double ood_blur_sigma = 1.5;
    int ood_blur_kernel = 7;

    // model.*
    std::size_t base_width = 8, depth = 2;

    // train.*
    long epochs = 16;
    std::size_t batch = 8;
    double lr = 1e-3;

    // loss.*
    LossConfig loss;

    // eval.*
    int ece_bins = 10;

    static RunConfig parse_file(const std::string& path);
    void validate() const;

    SyntheticSpec synthetic_spec(std::uint64_t stream) const;  // ID family
    SyntheticSpec ood_spec(std::uint64_t stream) const;
    BackboneConfig backbone_config() const;

    // Provenance hash over all effective values (seed overrides included).
    std::string config_hash() const;
};

}  // namespace eviseg
