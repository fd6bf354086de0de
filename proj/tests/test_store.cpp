#include <doctest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "oodkit/store.hpp"
#include "oracles.hpp"

using namespace oodkit;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Hand-assembled NPY v1.0 file with an arbitrary header dict and payload.
void write_raw_npy(const std::filesystem::path& p, const std::string& dict, const std::string& payload) {
    std::string header = dict;
    while ((10 + header.size() + 1) % 64 != 0) header.push_back(' ');
    header.push_back('\n');
    std::string bytes("\x93NUMPY\x01\x00", 8);
    bytes.push_back(static_cast<char>(header.size() & 0xFF));
    bytes.push_back(static_cast<char>(header.size() >> 8));
    bytes += header + payload;
    std::ofstream(p, std::ios::binary) << bytes;
}

std::string le_float(float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    std::string s;
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    return s;
}

Manifest make_manifest(const fixtures::TempDir& dir, std::size_t train_d = 8, std::size_t test_d = 8,
                       bool train_labels = true) {
    Rng rng(3);
    write_matrix(dir / "train.npy", fixtures::random_matrix(rng, 100, train_d));
    write_matrix(dir / "test.npy", fixtures::random_matrix(rng, 20, test_d));
    write_matrix(dir / "ood.npy", fixtures::random_matrix(rng, 30, 8));
    std::vector<std::int64_t> y(100);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int64_t>(i % 4);
    write_labels(dir / "train_y.npy", make_labels(y));

    Manifest m;
    m.dataset = "toy";
    m.base_dir = dir.path();
    m.splits["train"] = {"train.npy", train_labels ? std::optional<std::string>("train_y.npy") : std::nullopt,
                         Role::IdTrain, std::nullopt, std::nullopt};
    m.splits["test"] = {"test.npy", std::nullopt, Role::IdTest, std::nullopt, std::nullopt};
    m.splits["ood"] = {"ood.npy", std::nullopt, Role::OodTest, std::nullopt, std::nullopt};
    return m;
}

}  // namespace

TEST_CASE("1x1 matrix round-trips and occupies header + 4 payload bytes") {
    fixtures::TempDir dir;
    const EmbeddingMatrix m(1, 1, std::vector<float>{0.0f});
    write_matrix(dir / "a.npy", m);
    const auto bytes = file_bytes(dir / "a.npy");
    CHECK((bytes.size() - 4) % 64 == 0);
    CHECK(read_matrix(dir / "a.npy") == m);
}

TEST_CASE("on-disk bytes are fixed little-endian NPY v1.0") {
    fixtures::TempDir dir;
    const EmbeddingMatrix m(2, 3, std::vector<float>{1, 2, 3, 4, 5, 6});
    write_matrix(dir / "m.npy", m);
    const auto bytes = file_bytes(dir / "m.npy");

    REQUIRE(bytes.size() == 128 + 24);
    CHECK(bytes.substr(0, 8) == std::string("\x93NUMPY\x01\x00", 8));
    CHECK(static_cast<unsigned char>(bytes[8]) == 118);  // 128 - 10
    CHECK(bytes[9] == 0);
    const std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }";
    CHECK(bytes.substr(10, dict.size()) == dict);
    CHECK(bytes.find_first_not_of(' ', 10 + dict.size()) == 127);
    CHECK(bytes[127] == '\n');
    CHECK(bytes.substr(128, 4) == std::string("\x00\x00\x80\x3f", 4));  // 1.0f
    CHECK(bytes.substr(148, 4) == std::string("\x00\x00\xc0\x40", 4));  // 6.0f
    CHECK(read_matrix(dir / "m.npy") == m);
}

TEST_CASE("write_matrix rejects non-finite values before writing") {
    fixtures::TempDir dir;
    EmbeddingMatrix m(2, 2, 1.0f);
    m(1, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(write_matrix(dir / "bad.npy", m), "non-finite value at (1,0)", Error);
    CHECK_FALSE(std::filesystem::exists(dir / "bad.npy"));
}

TEST_CASE("read_matrix error paths") {
    fixtures::TempDir dir;
    const std::string dict2 = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }";

    SUBCASE("truncated payload") {
        write_raw_npy(dir / "t.npy", dict2, le_float(1) + le_float(2) + le_float(3));
        CHECK_THROWS_WITH_AS(read_matrix(dir / "t.npy"), doctest::Contains("payload length mismatch"), IoError);
    }
    SUBCASE("3-D header") {
        write_raw_npy(dir / "c.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1), }",
                      le_float(1));
        CHECK_THROWS_WITH_AS(read_matrix(dir / "c.npy"), doctest::Contains("expected 2-D array"), IoError);
    }
    SUBCASE("bad magic") {
        std::ofstream(dir / "x.npy", std::ios::binary) << "not an array at all";
        CHECK_THROWS_WITH_AS(read_matrix(dir / "x.npy"), doctest::Contains("bad magic"), IoError);
    }
    SUBCASE("non-finite payload") {
        write_raw_npy(dir / "n.npy", dict2,
                      le_float(1) + le_float(std::numeric_limits<float>::infinity()) + le_float(3) + le_float(4));
        CHECK_THROWS_WITH_AS(read_matrix(dir / "n.npy"), "non-finite value at (0,1)", Error);
    }
    SUBCASE("wrong dtype") {
        write_raw_npy(dir / "w.npy", "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1), }",
                      std::string(8, '\0'));
        CHECK_THROWS_WITH_AS(read_matrix(dir / "w.npy"), doctest::Contains("expected dtype <f4"), IoError);
    }
    SUBCASE("fortran order") {
        write_raw_npy(dir / "f.npy", "{'descr': '<f4', 'fortran_order': True, 'shape': (1, 1), }", le_float(1));
        CHECK_THROWS_AS(read_matrix(dir / "f.npy"), IoError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_matrix(dir / "missing.npy"), IoError); }
}

TEST_CASE("random matrices round-trip bit-exactly, including denormals") {
    fixtures::TempDir dir;
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto rows = 1 + rng.below(6), cols = 1 + rng.below(6);
        EmbeddingMatrix m(rows, cols);
        for (float& v : m.data()) {
            std::uint32_t bits;
            do {
                bits = static_cast<std::uint32_t>(rng.below(1ull << 32));
            } while (!std::isfinite(std::bit_cast<float>(bits)));
            v = std::bit_cast<float>(bits);
        }
        m.data()[0] = std::numeric_limits<float>::denorm_min();
        write_matrix(dir / "r.npy", m);
        const auto back = read_matrix(dir / "r.npy");
        REQUIRE(back.rows() == rows);
        REQUIRE(back.cols() == cols);
        for (std::size_t i = 0; i < m.size(); ++i) {
            REQUIRE(std::bit_cast<std::uint32_t>(back.data()[i]) == std::bit_cast<std::uint32_t>(m.data()[i]));
        }
    }
}

TEST_CASE("labels") {
    fixtures::TempDir dir;
    SUBCASE("valid labels") {
        write_labels(dir / "y.npy", make_labels({0, 1, 0}, 2));
        const auto y = read_labels(dir / "y.npy", 2);
        CHECK(y.values == std::vector<std::int64_t>{0, 1, 0});
        CHECK(y.n_classes == 2);
        CHECK(class_coverage_warnings(y).empty());
    }
    SUBCASE("negative label") {
        write_labels(dir / "y.npy", LabelVector{{0, -1}, 2});
        CHECK_THROWS_WITH_AS(read_labels(dir / "y.npy"), doctest::Contains("label out of range"), Error);
    }
    SUBCASE("label beyond n_classes") {
        write_labels(dir / "y.npy", LabelVector{{0, 3}, 4});
        CHECK_THROWS_WITH_AS(read_labels(dir / "y.npy", 3), doctest::Contains("label out of range"), Error);
    }
    SUBCASE("absent class warns") {
        write_labels(dir / "y.npy", make_labels({0, 2}, 3));
        const auto y = read_labels(dir / "y.npy", 3);
        CHECK(class_coverage_warnings(y) == std::vector<std::string>{"class 1 absent"});
    }
}

TEST_CASE("load_split") {
    fixtures::TempDir dir;
    SUBCASE("id_train shape and labels") {
        const auto m = make_manifest(dir);
        const auto s = load_split(m, "train");
        CHECK(s.n() == 100);
        CHECK(s.d() == 8);
        CHECK(s.role == Role::IdTrain);
        REQUIRE(s.labels);
        CHECK(s.labels->n_classes == 4);
    }
    SUBCASE("ood split without labels") {
        const auto s = load_split(make_manifest(dir), "ood");
        CHECK_FALSE(s.labels);
        CHECK(s.n() == 30);
    }
    SUBCASE("id_train without labels") {
        CHECK_THROWS_WITH_AS(load_split(make_manifest(dir, 8, 8, false), "train"), "id_train requires labels",
                             Error);
    }
    SUBCASE("missing split") { CHECK_THROWS_AS(load_split(make_manifest(dir), "nope"), IoError); }
    SUBCASE("dimension mismatch against other splits") {
        CHECK_THROWS_WITH_AS(load_split(make_manifest(dir, 8, 5), "train"), doctest::Contains("dimension mismatch"),
                             Error);
    }
    SUBCASE("absent id_train class is a warning") {
        auto m = make_manifest(dir);
        std::vector<std::int64_t> y(100);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int64_t>(2 * (i % 2));
        write_labels(dir / "train_y.npy", make_labels(y));
        const auto s = load_split(m, "train");
        CHECK(s.warnings == std::vector<std::string>{"class 1 absent"});
    }
}

TEST_CASE("validate_manifest") {
    fixtures::TempDir dir;
    SUBCASE("well formed") { CHECK(validate_manifest(make_manifest(dir)).empty()); }
    SUBCASE("two id_train splits") {
        auto m = make_manifest(dir);
        m.splits["train2"] = m.splits["train"];
        CHECK(validate_manifest(m) == std::vector<std::string>{"duplicate id_train role"});
    }
    SUBCASE("one split with a different dimension") {
        Rng rng(1);
        auto m = make_manifest(dir);
        write_matrix(dir / "odd.npy", fixtures::random_matrix(rng, 4, 5));
        m.splits["odd"] = {"odd.npy", std::nullopt, Role::OodTest, std::nullopt, std::nullopt};
        CHECK(validate_manifest(m) == std::vector<std::string>{"dimension mismatch: odd"});
    }
    SUBCASE("declared shape must match headers") {
        auto m = make_manifest(dir);
        m.splits["test"].n = 21;
        m.splits["test"].d = 8;
        CHECK(validate_manifest(m) == std::vector<std::string>{"declared n mismatch: test"});
    }
    SUBCASE("missing roles and unreadable files") {
        Manifest m;
        m.base_dir = dir.path();
        m.splits["ood"] = {"nothing.npy", std::nullopt, Role::OodTest, std::nullopt, std::nullopt};
        const auto issues = validate_manifest(m);
        CHECK(issues.size() == 3);
        CHECK(issues[0] == "missing id_train role");
        CHECK(issues[1] == "missing id_test role");
        CHECK(issues[2].rfind("unreadable matrix: ood", 0) == 0);
    }
}

TEST_CASE("manifest JSON round-trips through disk") {
    fixtures::TempDir dir;
    auto m = make_manifest(dir);
    m.splits["test"].n = 20;
    write_manifest(dir / "manifest.json", m);
    const auto back = read_manifest(dir / "manifest.json");
    CHECK(back.dataset == "toy");
    CHECK(back.splits.size() == 3);
    CHECK(back.splits.at("train").labels == std::optional<std::string>("train_y.npy"));
    CHECK_FALSE(back.splits.at("ood").labels);
    CHECK(back.splits.at("test").n == std::optional<std::size_t>(20));
    CHECK(validate_manifest(back).empty());
}

TEST_CASE("malformed manifest JSON is an I/O error") {
    fixtures::TempDir dir;
    std::ofstream(dir / "m.json") << R"({"dataset": "x", "splits": {"a": {"matrix": "a.npy", "role": "bogus"}}})";
    CHECK_THROWS_AS(read_manifest(dir / "m.json"), IoError);
    CHECK_THROWS_AS(read_manifest(dir / "missing.json"), IoError);
}
