#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "movi/dcu.hpp"

namespace movi {

// Widths of every learned stage. The "full" preset is the production model;
// "micro" keeps the same topology at a fraction of the width for fast tests
// and ablations. Everything here feeds the architecture fingerprint, so two
// models agree on wire format only if their configs match.
struct ModelConfig {
    DisplacementSet displacements = DisplacementSet::standard();
    std::array<int64_t, 3> enc_widths = {64, 128, 128};
    int64_t latent_channels = 128;       // C_y
    int64_t hyper_width = 64;
    int64_t hyper_latent_channels = 64;  // C_z
    std::array<int64_t, 4> frn_widths = {64, 128, 256, 512};
    bool frn_recurrent = true;           // false swaps C-LSTM blocks for plain convs

    int64_t input_channels() const { return displacements.channels(); }

    static ModelConfig full() { return {}; }

    static ModelConfig micro() {
        ModelConfig c;
        c.displacements = DisplacementSet{{3}, {}};
        c.enc_widths = {8, 8, 8};
        c.latent_channels = 8;
        c.hyper_width = 8;
        c.hyper_latent_channels = 8;
        c.frn_widths = {8, 8, 8, 8};
        return c;
    }

    // Small model for ablation studies: big enough to learn translating
    // textures in a couple of thousand steps, small enough for minutes.
    static ModelConfig small() {
        ModelConfig c;
        c.enc_widths = {16, 32, 32};
        c.latent_channels = 32;
        c.hyper_width = 16;
        c.hyper_latent_channels = 16;
        c.frn_widths = {16, 32, 64, 128};
        return c;
    }

    nlohmann::json to_json() const {
        return {
            {"displacements",
             {{"horizontal", displacements.horizontal}, {"vertical", displacements.vertical}}},
            {"enc_widths", enc_widths},
            {"latent_channels", latent_channels},
            {"hyper_width", hyper_width},
            {"hyper_latent_channels", hyper_latent_channels},
            {"frn_widths", frn_widths},
            {"frn_recurrent", frn_recurrent},
        };
    }

    static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

    // Fields present in j override the base config.
    static ModelConfig from_json(const nlohmann::json& j, ModelConfig c) {
        if (j.contains("displacements")) {
            c.displacements.horizontal =
                j["displacements"].value("horizontal", c.displacements.horizontal);
            c.displacements.vertical =
                j["displacements"].value("vertical", c.displacements.vertical);
            c.displacements.canonicalize();
        }
        if (j.contains("enc_widths")) c.enc_widths = j["enc_widths"];
        c.latent_channels = j.value("latent_channels", c.latent_channels);
        c.hyper_width = j.value("hyper_width", c.hyper_width);
        c.hyper_latent_channels = j.value("hyper_latent_channels", c.hyper_latent_channels);
        if (j.contains("frn_widths")) c.frn_widths = j["frn_widths"];
        c.frn_recurrent = j.value("frn_recurrent", c.frn_recurrent);
        return c;
    }

    // Canonical string for fingerprinting (nlohmann dumps keys sorted).
    std::string canonical() const { return to_json().dump(); }

    bool operator==(const ModelConfig& o) const { return canonical() == o.canonical(); }
};

}  // namespace movi
