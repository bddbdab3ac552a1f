#include "asu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace asu {

namespace {

constexpr char kMagic[8] = {'A', 'S', 'U', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
            {"n_layers", c.n_layers},     {"d_ff", c.d_ff},         {"max_seq_len", c.max_seq_len},
            {"ln_eps", c.ln_eps}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.ln_eps = j.at("ln_eps").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    nlohmann::json manifest;
    manifest["config"] = config_to_json(params.config);
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params.tensors) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"byte_offset", offset}});
        offset += t.size() * sizeof(double);
    }
    manifest["tensors"] = std::move(tensors);
    const std::string mtext = manifest.dump();
    if (mtext.size() > 0xffffffffull) throw ContractError("save_checkpoint: manifest too large");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("save_checkpoint: cannot open " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t mlen = static_cast<std::uint32_t>(mtext.size());
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, t] : params.tensors) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw ContractError("save_checkpoint: write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("load_checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ContractError("load_checkpoint: bad magic in " + path.string());
    }
    std::uint32_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), mlen);
    if (!in) throw ContractError("load_checkpoint: truncated manifest in " + path.string());
    nlohmann::json manifest = nlohmann::json::parse(mtext);

    ModelParams p;
    p.config = config_from_json(manifest.at("config"));
    p.config.validate();
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> data(shape_numel(shape));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw ContractError("load_checkpoint: truncated payload for '" + name + "'");
        p.tensors.emplace(name, Tensor::from(std::move(shape), std::move(data)));
    }
    return p;
}

namespace {

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h = 14695981039346656037ull) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("file_checksum: cannot open " + path.string());
    std::uint64_t h = 14695981039346656037ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a(reinterpret_cast<const unsigned char*>(buf), static_cast<std::size_t>(in.gcount()), h);
        if (in.eof()) break;
    }
    return h;
}

std::uint64_t params_checksum(const ModelParams& params) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& [name, t] : params.tensors) {
        h = fnv1a(reinterpret_cast<const unsigned char*>(name.data()), name.size(), h);
        h = fnv1a(reinterpret_cast<const unsigned char*>(t.data().data()), t.size() * sizeof(double), h);
    }
    return h;
}

}  // namespace asu
