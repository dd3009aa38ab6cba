#include "profact/checkpoint.hpp"

#include "profact/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>

namespace profact {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "archive format assumes little-endian");

std::map<std::string, Tensor> parameter_table(const nn::Module& module) {
    std::map<std::string, Tensor> out;
    for (auto& [name, t] : module.named_parameters()) {
        out.emplace(name, t);
    }
    return out;
}

void copy_values(const Tensor& from, Tensor& to, const std::string& name) {
    if (from.shape() != to.shape()) {
        throw ShapeMismatch("parameter " + name + ": stored " + shape_str(from.shape()) +
                            " vs model " + shape_str(to.shape()));
    }
    auto src = from.data();
    auto dst = to.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
}

} // namespace

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
    nlohmann::json header = archive.header;
    nlohmann::json table = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
        table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<uint64_t>(t.numel());
    }
    header["tensors"] = table;
    const std::string text = header.dump();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        const uint64_t size = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&size), sizeof size);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : archive.tensors) {
            auto d = t.data();
            out.write(reinterpret_cast<const char*>(d.data()),
                      static_cast<std::streamsize>(d.size() * sizeof(double)));
        }
        if (!out) {
            throw Error("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FileNotFound(path.string());
    }
    char magic[8];
    uint64_t size = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&size), sizeof size);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw DataUnavailable(path.string() + " is not a weight archive");
    }
    std::string text(size, '\0');
    in.read(text.data(), static_cast<std::streamsize>(size));
    TensorArchive archive;
    archive.header = nlohmann::json::parse(text);
    const std::streamoff data_start = in.tellg();
    for (const auto& entry : archive.header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
        in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>() * sizeof(double)));
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!in) {
            throw DataUnavailable(path.string() + " is truncated");
        }
        archive.tensors.emplace(entry.at("name").get<std::string>(),
                                Tensor::from_data(std::move(shape), std::move(values)));
    }
    archive.header.erase("tensors");
    return archive;
}

std::string weights_hash(const nn::Module& module) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : parameter_table(module)) {
        mix(name.data(), name.size());
        for (int64_t d : t.shape()) {
            mix(&d, sizeof d);
        }
        auto v = t.data();
        mix(v.data(), v.size() * sizeof(double));
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

void save_checkpoint(const ProFact& model, const std::filesystem::path& path, const nlohmann::json& meta) {
    TensorArchive archive;
    archive.header = {{"format", "profact-checkpoint"},
                      {"config", model.config()},
                      {"meta", meta},
                      {"weights_hash", weights_hash(model)}};
    archive.tensors = parameter_table(model);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    write_archive(archive, path);
}

namespace {

void load_into(ProFact& model, const TensorArchive& archive, const std::string& source) {
    auto params = parameter_table(model);
    for (auto& [name, slot] : params) {
        auto it = archive.tensors.find(name);
        if (it == archive.tensors.end()) {
            throw DataUnavailable(source + " lacks parameter " + name);
        }
        copy_values(it->second, slot, name);
    }
    for (const auto& [name, t] : archive.tensors) {
        if (!params.count(name)) {
            throw DataUnavailable(source + " has unexpected parameter " + name);
        }
    }
}

} // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    TensorArchive archive = read_archive(path);
    ModelConfig cfg = archive.header.at("config").get<ModelConfig>();
    LoadedCheckpoint out;
    out.model = std::make_unique<ProFact>(cfg, 0);
    load_into(*out.model, archive, path.string());
    out.meta = archive.header.value("meta", nlohmann::json::object());
    return out;
}

void load_weights(ProFact& model, const std::filesystem::path& path) {
    load_into(model, read_archive(path), path.string());
}

void copy_weights(const nn::Module& from, nn::Module& to) {
    auto src = parameter_table(from);
    auto dst = parameter_table(to);
    if (src.size() != dst.size()) {
        throw ShapeMismatch("copy_weights: parameter tables differ in size");
    }
    for (auto& [name, slot] : dst) {
        auto it = src.find(name);
        if (it == src.end()) {
            throw ShapeMismatch("copy_weights: source lacks " + name);
        }
        copy_values(it->second, slot, name);
    }
}

KeyMap mit_key_map(const EncoderConfig& cfg) {
    KeyMap map;
    auto add = [&map](const std::string& ext, const std::string& ours) { map[ext] = {ours}; };
    for (int s = 0; s < 4; ++s) {
        const std::string ext_stage = std::to_string(s + 1);
        const std::string ours = "clb.encoder.stage" + ext_stage + ".";
        for (const char* p : {"weight", "bias"}) {
            const std::string leaf = p;
            add("patch_embed" + ext_stage + ".proj." + leaf, ours + "patch_embed.proj." + leaf);
            add("patch_embed" + ext_stage + ".norm." + leaf, ours + "patch_embed.norm." + leaf);
            add("norm" + ext_stage + "." + leaf, ours + "norm." + leaf);
            for (int b = 0; b < cfg.depths[s]; ++b) {
                const std::string eb = "block" + ext_stage + "." + std::to_string(b) + ".";
                const std::string ob = ours + "block" + std::to_string(b) + ".";
                add(eb + "norm1." + leaf, ob + "norm1." + leaf);
                add(eb + "attn.q." + leaf, ob + "attn.q." + leaf);
                map[eb + "attn.kv." + leaf] = {ob + "attn.k." + leaf, ob + "attn.v." + leaf};
                add(eb + "attn.proj." + leaf, ob + "attn.proj." + leaf);
                if (cfg.sr_ratios[s] > 1) {
                    add(eb + "attn.sr." + leaf, ob + "attn.sr." + leaf);
                    add(eb + "attn.norm." + leaf, ob + "attn.sr_norm." + leaf);
                }
                add(eb + "norm2." + leaf, ob + "ffn.norm." + leaf);
                add(eb + "mlp.fc1." + leaf, ob + "ffn.fc1." + leaf);
                add(eb + "mlp.dwconv.dwconv." + leaf, ob + "ffn.dwconv." + leaf);
                add(eb + "mlp.fc2." + leaf, ob + "ffn.fc2." + leaf);
            }
        }
    }
    return map;
}

KeyMap read_key_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FileNotFound(path.string());
    }
    nlohmann::json j = nlohmann::json::parse(in);
    KeyMap map;
    for (auto& [ext, target] : j.items()) {
        if (target.is_string()) {
            map[ext] = {target.get<std::string>()};
        } else {
            map[ext] = target.get<std::vector<std::string>>();
        }
    }
    return map;
}

ImportReport import_backbone(ProFact& model, const std::filesystem::path& path, const KeyMap& map) {
    ImportReport report;
    if (!std::filesystem::exists(path)) {
        return report;
    }
    report.file_present = true;
    TensorArchive archive = read_archive(path);
    auto params = parameter_table(model);
    for (const auto& [ext, t] : archive.tensors) {
        auto it = map.find(ext);
        if (it == map.end()) {
            report.unmapped.push_back(ext);
            continue;
        }
        const auto& targets = it->second;
        const int64_t parts = static_cast<int64_t>(targets.size());
        if (t.rank() == 0 || t.dim(0) % parts != 0) {
            throw ShapeMismatch("cannot split " + ext + " " + shape_str(t.shape()) + " into " +
                                std::to_string(parts) + " parts");
        }
        Shape piece_shape = t.shape();
        piece_shape[0] /= parts;
        const size_t piece = static_cast<size_t>(shape_numel(piece_shape));
        for (int64_t k = 0; k < parts; ++k) {
            const std::string& name = targets[static_cast<size_t>(k)];
            auto slot = params.find(name);
            if (slot == params.end()) {
                throw DataUnavailable("key map target " + name + " is not a model parameter");
            }
            auto src = t.data().subspan(static_cast<size_t>(k) * piece, piece);
            Tensor part = Tensor::from_data(piece_shape, {src.begin(), src.end()});
            copy_values(part, slot->second, name);
            report.loaded.push_back(name);
        }
    }
    return report;
}

} // namespace profact
