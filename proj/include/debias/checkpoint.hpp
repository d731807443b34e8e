#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/autodiff.hpp"
#include "debias/common.hpp"

namespace debias::ad {

// Checkpoint container: magic "DBLB1\n", one JSON manifest line listing
// (name, shape, offset), then raw little-endian float64 payloads in manifest
// order. Offsets count from the first byte after the manifest newline.

inline constexpr const char* kCheckpointMagic = "DBLB1\n";

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const NamedTensors& tensors, std::ostream& out) {
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.numel() * sizeof(double);
    }
    out << kCheckpointMagic << manifest.dump() << '\n';
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    require(out.good(), "checkpoint: write failed");
}

inline void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open '" + path + "' for writing");
    save_checkpoint(tensors, out);
}

inline NamedTensors load_checkpoint(std::istream& in, const std::string& origin = "<stream>") {
    char magic[6];
    in.read(magic, 6);
    require(in.gcount() == 6 && std::memcmp(magic, kCheckpointMagic, 6) == 0,
            origin + ": corrupt checkpoint header (bad magic)");
    std::string manifest_line;
    require(static_cast<bool>(std::getline(in, manifest_line)), origin + ": corrupt checkpoint header (no manifest)");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_line);
    } catch (const nlohmann::json::exception& e) {
        fail(origin, ": corrupt checkpoint manifest: ", e.what());
    }

    NamedTensors tensors;
    std::uint64_t expect_offset = 0;
    for (const auto& entry : manifest) {
        std::string name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        auto offset = entry.at("offset").get<std::uint64_t>();
        require(offset == expect_offset, origin + ": checkpoint manifest offsets out of order");
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        require(static_cast<std::size_t>(in.gcount()) == t.numel() * sizeof(double),
                origin + ": truncated checkpoint payload for tensor '" + name + "'");
        expect_offset += t.numel() * sizeof(double);
        tensors.emplace_back(std::move(name), std::move(t));
    }
    return tensors;
}

inline NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint file '" + path + "'");
    return load_checkpoint(in, path);
}

}  // namespace debias::ad
