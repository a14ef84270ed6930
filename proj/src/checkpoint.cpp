#include "moma/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>
#include <json.hpp>

namespace moma::io {

using nlohmann::json;

namespace {

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

json config_to_json(const model::ViTConfig& c) {
    return json{{"image_size", c.image_size},
                {"patch_size", c.patch_size},
                {"in_channels", c.in_channels},
                {"depth", c.depth},
                {"heads", c.heads},
                {"dim", c.dim},
                {"mlp_ratio", c.mlp_ratio},
                {"decoder_depth", c.decoder_depth},
                {"decoder_dim", c.decoder_dim},
                {"use_class_token", c.use_class_token}};
}

model::ViTConfig config_from_json(const json& j) {
    model::ViTConfig c;
    c.image_size = j.at("image_size").get<int64_t>();
    c.patch_size = j.at("patch_size").get<int64_t>();
    c.in_channels = j.at("in_channels").get<int64_t>();
    c.depth = j.at("depth").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.dim = j.at("dim").get<int64_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.decoder_depth = j.at("decoder_depth").get<int64_t>();
    c.decoder_dim = j.at("decoder_dim").get<int64_t>();
    c.use_class_token = j.at("use_class_token").get<bool>();
    return c;
}

std::string config_summary(const model::ViTConfig& c) {
    return std::to_string(c.depth) + "L/" + std::to_string(c.heads) + "H/" +
           std::to_string(c.dim) + "D img" + std::to_string(c.image_size) + " patch" +
           std::to_string(c.patch_size);
}

}  // namespace

void save_named(const NamedTensors& bundle, const std::string& path) {
    json manifest = json::array();
    std::string payload;
    for (const auto& [name, t] : bundle.tensors) {
        json entry;
        entry["name"] = name;
        entry["dims"] = t.shape();
        entry["offset"] = payload.size();
        for (float v : t.data()) put_u32(payload, std::bit_cast<uint32_t>(v));
        manifest.push_back(entry);
    }

    json header;
    header["config"] = config_to_json(bundle.config);
    header["role"] = bundle.role;
    header["params"] = std::move(manifest);
    header["payload_bytes"] = payload.size();
    const std::string header_str = header.dump();

    std::string file;
    file += "MOMA";
    put_u32(file, kCheckpointVersion);
    put_u32(file, static_cast<uint32_t>(header_str.size()));
    file += header_str;
    file += payload;
    put_u32(file, static_cast<uint32_t>(
                      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                            static_cast<uInt>(payload.size()))));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw IoError("short write: " + path);
}

NamedTensors load_named(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    if (file.size() < 16) throw CheckpointError("file too small: " + path);
    if (std::memcmp(file.data(), "MOMA", 4) != 0)
        throw CheckpointError("bad magic bytes in " + path);
    const uint32_t version = get_u32(file.data() + 4);
    if (version != kCheckpointVersion)
        throw CheckpointError("version skew in " + path + ": file has " +
                              std::to_string(version) + ", reader expects " +
                              std::to_string(kCheckpointVersion));
    const uint32_t header_len = get_u32(file.data() + 8);
    if (12 + static_cast<size_t>(header_len) + 4 > file.size())
        throw CheckpointError("header overruns file: " + path);

    json header;
    try {
        header = json::parse(file.begin() + 12, file.begin() + 12 + header_len);
    } catch (const json::exception& e) {
        throw CheckpointError("unparseable header in " + path + ": " + e.what());
    }

    const size_t payload_off = 12 + header_len;
    const size_t payload_bytes = header.at("payload_bytes").get<size_t>();
    if (payload_off + payload_bytes + 4 != file.size())
        throw CheckpointError("payload size mismatch in " + path);

    const uint32_t stored_crc = get_u32(file.data() + payload_off + payload_bytes);
    const uint32_t actual_crc = static_cast<uint32_t>(
        crc32(0L, file.data() + payload_off, static_cast<uInt>(payload_bytes)));
    if (stored_crc != actual_crc)
        throw CheckpointError("checksum failure in " + path);

    NamedTensors bundle;
    bundle.config = config_from_json(header.at("config"));
    bundle.role = header.at("role").get<std::string>();

    size_t expected_offset = 0;
    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape dims = entry.at("dims").get<Shape>();
        const size_t offset = entry.at("offset").get<size_t>();
        const size_t bytes = static_cast<size_t>(numel_of(dims)) * 4;
        if (offset != expected_offset || offset + bytes > payload_bytes)
            throw CheckpointError("manifest overflow at " + name + " in " + path);
        expected_offset = offset + bytes;
        std::vector<float> values(static_cast<size_t>(numel_of(dims)));
        const uint8_t* src = file.data() + payload_off + offset;
        for (size_t i = 0; i < values.size(); ++i)
            values[i] = std::bit_cast<float>(get_u32(src + 4 * i));
        bundle.tensors.emplace_back(name, Tensor(dims, std::move(values)));
    }
    if (expected_offset != payload_bytes)
        throw CheckpointError("manifest does not cover payload in " + path);
    return bundle;
}

void save_checkpoint(const model::ModelWeights& weights, const std::string& path) {
    NamedTensors bundle;
    bundle.config = weights.config;
    bundle.role = model::role_name(weights.role);
    weights.for_each_param([&](const std::string& name, const Tensor& t) {
        bundle.tensors.emplace_back(name, t);
    });
    save_named(bundle, path);
}

model::ModelWeights load_checkpoint(const std::string& path, const model::ViTConfig* expected) {
    NamedTensors bundle = load_named(path);
    if (expected && !(bundle.config == *expected))
        throw CheckpointError("config mismatch loading " + path + ": file has " +
                              config_summary(bundle.config) + ", expected " +
                              config_summary(*expected));

    const model::Role role = model::role_from_name(bundle.role);
    bool with_decoder = false;
    for (const auto& [name, t] : bundle.tensors)
        if (name.rfind("decoder.", 0) == 0) with_decoder = true;

    model::ModelWeights weights = model::ModelWeights::init(bundle.config, 0, with_decoder, role);
    size_t cursor = 0;
    weights.for_each_param([&](const std::string& name, Tensor& t) {
        if (cursor >= bundle.tensors.size() || bundle.tensors[cursor].first != name)
            throw CheckpointError("manifest missing parameter " + name + " in " + path);
        Tensor& loaded = bundle.tensors[cursor].second;
        if (loaded.shape() != t.shape())
            throw CheckpointError("parameter " + name + " has shape " +
                                  shape_str(loaded.shape()) + ", model needs " +
                                  shape_str(t.shape()));
        t = loaded;
        ++cursor;
    });
    if (cursor != bundle.tensors.size())
        throw CheckpointError("manifest has extra parameters in " + path);
    weights.set_trainable(role == model::Role::Student);
    return weights;
}

}  // namespace moma::io
