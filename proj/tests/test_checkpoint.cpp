#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "asu/checkpoint.hpp"

using namespace asu;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 13;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ff = 16;
    c.max_seq_len = 16;
    return c;
}

fs::path tmpdir() {
    auto d = fs::temp_directory_path() / "asu_ckpt_test";
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    ModelParams p = init_params(tiny(), 99);
    auto path = tmpdir() / "a.ckpt";
    save_checkpoint(p, path);
    ModelParams q = load_checkpoint(path);
    CHECK(q.config.vocab_size == p.config.vocab_size);
    CHECK(q.config.n_layers == p.config.n_layers);
    for (const auto& [name, t] : p.tensors) {
        const Tensor& u = q.at(name);
        REQUIRE(u.size() == t.size());
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(u[i] == t[i]);
    }
    CHECK(params_checksum(p) == params_checksum(q));
}

TEST_CASE("re-saving identical params yields byte-identical files") {
    ModelParams p = init_params(tiny(), 5);
    auto p1 = tmpdir() / "b1.ckpt";
    auto p2 = tmpdir() / "b2.ckpt";
    save_checkpoint(p, p1);
    save_checkpoint(p.clone(), p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(file_checksum(p1) == file_checksum(p2));
}

TEST_CASE("file starts with the magic and honest manifest") {
    ModelParams p = init_params(tiny(), 5);
    auto path = tmpdir() / "c.ckpt";
    save_checkpoint(p, path);
    std::string bytes = slurp(path);
    REQUIRE(bytes.size() > 12);
    CHECK(bytes.substr(0, 8) == "ASUCKPT1");
}

TEST_CASE("corrupt and missing files are rejected") {
    auto path = tmpdir() / "d.ckpt";
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPT garbage";
    }
    CHECK_THROWS_AS((void)load_checkpoint(path), ContractError);
    CHECK_THROWS_AS((void)load_checkpoint(tmpdir() / "nope.ckpt"), ContractError);
}

TEST_CASE("truncated payload is rejected") {
    ModelParams p = init_params(tiny(), 5);
    auto path = tmpdir() / "e.ckpt";
    save_checkpoint(p, path);
    std::string bytes = slurp(path);
    {
        std::ofstream out(path, std::ios::binary);
        out << bytes.substr(0, bytes.size() - 16);
    }
    CHECK_THROWS_AS((void)load_checkpoint(path), ContractError);
}

TEST_CASE("different params give different checksums") {
    ModelParams p = init_params(tiny(), 5);
    ModelParams q = p.clone();
    q.at("out_proj").data()[3] += 1e-9;
    CHECK(params_checksum(p) != params_checksum(q));
}
