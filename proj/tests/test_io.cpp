#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>

#include "dseg/checkpoint.hpp"
#include "dseg/config.hpp"
#include "dseg/pnm.hpp"
#include "dseg/tensorfile.hpp"
#include "test_util.hpp"

using namespace dseg;
using namespace dseg::test;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dseg_test_" + std::to_string(Catch::rngSeed()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("tensor round-trip is lossless for all dtypes") {
    TempDir dir;
    Xoshiro256 rng(51);
    for (int trial = 0; trial < 10; ++trial) {
        AnyTensor t;
        const int ndim = static_cast<int>(rng.uniform_int(1, 4));
        std::size_t n = 1;
        for (int i = 0; i < ndim; ++i) {
            const auto d = static_cast<std::uint32_t>(rng.uniform_int(1, 5));
            t.dims.push_back(d);
            n *= d;
        }
        const int which = trial % 4;
        if (which == 0) {
            std::vector<float> v(n);
            for (auto& x : v) x = static_cast<float>(rng.uniform(-100, 100));
            t.data = v;
        } else if (which == 1) {
            std::vector<double> v(n);
            for (auto& x : v) x = rng.uniform(-1e9, 1e9);
            t.data = v;
        } else if (which == 2) {
            std::vector<std::uint16_t> v(n);
            for (auto& x : v) x = static_cast<std::uint16_t>(rng.uniform_int(0, 65535));
            t.data = v;
        } else {
            std::vector<std::uint8_t> v(n);
            for (auto& x : v) x = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
            t.data = v;
        }

        const fs::path file = dir.path / ("t" + std::to_string(trial) + ".dseg");
        write_tensor_file(file, t);
        const AnyTensor back = read_tensor_file(file);
        CHECK(back.dims == t.dims);
        CHECK(back.data == t.data);
    }
}

TEST_CASE("tensor parsing rejects corrupt input") {
    std::string buf;
    AnyTensor t;
    t.dims = {2, 2};
    t.data = std::vector<double>{1.0, 2.0, 3.0, 4.0};
    append_tensor(buf, t);

    SECTION("bad magic") {
        std::string bad = buf;
        bad[0] = 'X';
        std::size_t pos = 0;
        CHECK_THROWS_AS(parse_tensor(bad, pos), std::runtime_error);
    }
    SECTION("truncated payload") {
        std::string bad = buf.substr(0, buf.size() - 3);
        std::size_t pos = 0;
        CHECK_THROWS_AS(parse_tensor(bad, pos), std::runtime_error);
    }
    SECTION("mismatched dims on write") {
        AnyTensor wrong;
        wrong.dims = {3};
        wrong.data = std::vector<double>{1.0};
        std::string out;
        CHECK_THROWS_AS(append_tensor(out, wrong), std::runtime_error);
    }
}

TEST_CASE("tensor archive keeps named entries") {
    TempDir dir;
    AnyTensor a;
    a.dims = {2};
    a.data = std::vector<double>{1.5, -2.5};
    AnyTensor b;
    b.dims = {3};
    b.data = std::vector<std::uint16_t>{7, 8, 9};

    const fs::path file = dir.path / "archive.dseg";
    write_tensor_archive(file, {{"alpha", a}, {"beta", b}});
    auto back = read_tensor_archive(file);
    REQUIRE(back.size() == 2);
    CHECK(back.at("alpha").f64() == a.f64());
    CHECK(back.at("beta").u16() == b.u16());
}

TEST_CASE("ppm and pgm round-trips") {
    TempDir dir;
    Xoshiro256 rng(52);

    SECTION("8-bit rgb") {
        RgbImage img;
        img.height = 5;
        img.width = 7;
        img.pixels.resize(5 * 7 * 3);
        for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        const fs::path file = dir.path / "img.ppm";
        write_ppm(file, img);
        auto back = read_ppm(file);
        CHECK(back.height == 5);
        CHECK(back.width == 7);
        CHECK(back.pixels == img.pixels);
    }

    SECTION("16-bit labels") {
        LabelMap labels(4, 6);
        for (int& v : labels.values) v = static_cast<int>(rng.uniform_int(0, 40000));
        const fs::path file = dir.path / "labels.pgm";
        write_pgm16(file, labels);
        auto back = read_pgm(file);
        CHECK(back.height == 4);
        CHECK(back.width == 6);
        CHECK(back.values == labels.values);
    }

    SECTION("header comments are skipped") {
        const std::string data = "P5\n# a comment\n2 1\n255\nAB";
        const fs::path file = dir.path / "commented.pgm";
        atomic_write_file(file, data);
        auto labels = read_pgm(file);
        CHECK(labels.width == 2);
        CHECK(labels.values[0] == 'A');
    }

    SECTION("labels beyond 16 bits are rejected") {
        LabelMap labels(1, 1);
        labels.values = {70000};
        CHECK_THROWS_AS(write_pgm16(dir.path / "big.pgm", labels), std::runtime_error);
    }

    SECTION("no temp files remain after writes") {
        int files = 0;
        for (auto it = fs::directory_iterator(dir.path); it != fs::directory_iterator(); ++it) {
            CHECK(it->path().extension() != ".tmp");
            ++files;
        }
        (void)files;
    }
}

TEST_CASE("checkpoint round-trip") {
    TempDir dir;
    NetConfig cfg;
    cfg.hidden_channels = 5;
    cfg.num_layers = 3;
    cfg.out_dims = 2;
    cfg.weight_init_seed = 0xdeadbeefcafe1234ULL;
    NetParams net = init_net(cfg);
    AdamState adam = init_adam(net, 2e-3);

    // A step so the moments are nonzero.
    NetGrads grads;
    Xoshiro256 rng(53);
    for (const auto& layer : net.layers) {
        grads.weights.emplace_back(layer.weights.size());
        grads.bias.emplace_back(layer.bias.size());
    }
    for (auto& w : grads.weights)
        for (double& v : w) v = rng.uniform(-1.0, 1.0);
    for (auto& b : grads.bias)
        for (double& v : b) v = rng.uniform(-1.0, 1.0);
    adam_step(net, grads, adam);

    const fs::path file = dir.path / "ckpt.dseg";
    save_checkpoint(file, net, adam);
    auto [net2, adam2] = load_checkpoint(file);

    CHECK(net2.config.hidden_channels == cfg.hidden_channels);
    CHECK(net2.config.weight_init_seed == cfg.weight_init_seed);
    REQUIRE(net2.layers.size() == net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK(net2.layers[l].weights == net.layers[l].weights);
        CHECK(net2.layers[l].bias == net.layers[l].bias);
        CHECK(adam2.m_w[l] == adam.m_w[l]);
        CHECK(adam2.v_b[l] == adam.v_b[l]);
    }
    CHECK(adam2.step == 1);
    CHECK(adam2.lr == 2e-3);

    // Embedding tensors ride the same container.
    EmbeddingMap emb(3, 4, 2);
    for (std::size_t i = 0; i < emb.values.size(); ++i) emb.values[i] = 0.5 * i;
    write_tensor_file(dir.path / "emb.dseg", tensor_from_embedding(emb));
    auto emb2 = embedding_from_tensor(read_tensor_file(dir.path / "emb.dseg"));
    CHECK(emb2.values == emb.values);
    CHECK(emb2.dims == 2);
}

TEST_CASE("kv config parsing") {
    SECTION("values, comments and blank lines") {
        auto kv = parse_kv_text(
            "# run settings\n"
            "steps = 100\n"
            "\n"
            "delta_v = 0.5  # margin\n"
            "out_dir = runs/exp1\n");
        CHECK(kv.at("steps") == "100");
        CHECK(kv.at("delta_v") == "0.5");
        CHECK(kv.at("out_dir") == "runs/exp1");
        CHECK(kv.size() == 3);
    }
    SECTION("missing equals sign") {
        CHECK_THROWS_AS(parse_kv_text("steps 100\n"), std::runtime_error);
    }
    SECTION("duplicate key") {
        CHECK_THROWS_AS(parse_kv_text("a = 1\na = 2\n"), std::runtime_error);
    }
    SECTION("empty key") {
        CHECK_THROWS_AS(parse_kv_text("= 3\n"), std::runtime_error);
    }
}
