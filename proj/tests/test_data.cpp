#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "histofuse/augment.hpp"
#include "histofuse/breakhis.hpp"
#include "histofuse/image.hpp"
#include "histofuse/synthetic.hpp"
#include "oracles.hpp"

using namespace histofuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("histofuse_test_" + std::to_string(Rng::mix(reinterpret_cast<std::uintptr_t>(this),
                                                            static_cast<std::uint64_t>(::getpid()))));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

BiopsyRecord random_record(Rng& rng) {
    BiopsyRecord r;
    r.method = rng.uniform() < 0.8 ? "SOB" : "XYZ";
    r.tumor_class = rng.uniform() < 0.5 ? TumorClass::benign : TumorClass::malignant;
    const auto& subs = r.tumor_class == TumorClass::benign ? benign_subtypes() : malignant_subtypes();
    r.subtype = subs[rng.uniform_index(subs.size())];
    char year[3];
    std::snprintf(year, sizeof year, "%02zu", rng.uniform_index(100));
    r.patient_id = std::string(year) + "-" + std::to_string(1 + rng.uniform_index(99999));
    const int mags[4] = {40, 100, 200, 400};
    r.magnification = mags[rng.uniform_index(4)];
    r.seq = static_cast<int>(1 + rng.uniform_index(9999));
    return r;
}

void touch(const fs::path& p) { std::ofstream(p) << "x"; }

}  // namespace

TEST_CASE("parse_breakhis_filename") {
    SECTION("the documented example decodes field by field") {
        const auto r = parse_breakhis_filename("SOB_B_TA-14-4659-40-001.png");
        REQUIRE(r.method == "SOB");
        REQUIRE(r.tumor_class == TumorClass::benign);
        REQUIRE(r.subtype == "TA");
        REQUIRE(r.patient_id == "14-4659");
        REQUIRE(r.magnification == 40);
        REQUIRE(r.seq == 1);
    }

    SECTION("a malignant record with multi-digit sequence") {
        const auto r = parse_breakhis_filename("SOB_M_DC-23-9123-200-014.png");
        REQUIRE(r.method == "SOB");
        REQUIRE(r.tumor_class == TumorClass::malignant);
        REQUIRE(r.subtype == "DC");
        REQUIRE(r.patient_id == "23-9123");
        REQUIRE(r.magnification == 200);
        REQUIRE(r.seq == 14);
    }

    SECTION("class/subtype mismatch is a taxonomy error") {
        try {
            parse_breakhis_filename("SOB_B_DC-14-4659-40-001.png");
            FAIL("expected taxonomy error");
        } catch (const ParseError& e) {
            REQUIRE(std::string(e.what()).find("taxonomy") != std::string::npos);
        }
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOB_M_TA-14-4659-40-001.png"), ParseError);
    }

    SECTION("malformed names report the offending segment") {
        try {
            parse_breakhis_filename("SOB_B_TA-14-4659-50-001.png");
            FAIL("expected magnification error");
        } catch (const ParseError& e) {
            REQUIRE(std::string(e.what()).find("magnification") != std::string::npos);
        }
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOB_Q_TA-14-4659-40-001.png"), ParseError);
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOBBTA-14-4659-40-001.png"), ParseError);
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOB_B_TA-14-40-001.png"), ParseError);
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOB_B_ZZ-14-4659-40-001.png"), ParseError);
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOB_B_TA-1-4659-40-001.png"), ParseError);
        REQUIRE_THROWS_AS(parse_breakhis_filename("SOB_B_TA-14-4659-40-000.png"), ParseError);
    }

    SECTION("round trip: parse(format(record)) == record for random valid records") {
        Rng rng(555);
        for (int i = 0; i < 2000; ++i) {
            const BiopsyRecord r = random_record(rng);
            const BiopsyRecord back = parse_breakhis_filename(format_breakhis_filename(r));
            REQUIRE(back == r);
        }
    }
}

TEST_CASE("scan_directory") {
    SECTION("empty directory: empty manifest, empty skip report") {
        TempDir tmp;
        const auto scan = scan_directory(tmp.path.string());
        REQUIRE(scan.manifest.size() == 0);
        REQUIRE(scan.skipped.empty());
    }

    SECTION("one valid and one invalid name") {
        TempDir tmp;
        touch(tmp.path / "SOB_B_TA-14-4659-40-001.png");
        touch(tmp.path / "notes.txt");
        const auto scan = scan_directory(tmp.path.string());
        REQUIRE(scan.manifest.size() == 1);
        REQUIRE(scan.skipped.size() == 1);
        REQUIRE(scan.skipped[0].path.find("notes.txt") != std::string::npos);
    }

    SECTION("per-subtype counts of a planted tree match the planted numbers") {
        TempDir tmp;
        Rng rng(77);
        std::map<std::string, std::size_t> planted;
        int seq = 1;
        for (const auto& [subtype, tclass, count] :
             std::vector<std::tuple<std::string, std::string, std::size_t>>{
                 {"A", "B", 4}, {"F", "B", 7}, {"DC", "M", 5}, {"PC", "M", 2}}) {
            fs::create_directories(tmp.path / subtype);
            for (std::size_t i = 0; i < count; ++i) {
                touch(tmp.path / subtype /
                      ("SOB_" + tclass + "_" + subtype + "-14-2386-100-" + std::to_string(seq++) +
                       ".png"));
            }
            planted[subtype] = count;
        }
        const auto scan = scan_directory(tmp.path.string());
        REQUIRE(scan.manifest.counts_by_subtype() == planted);
        REQUIRE(scan.skipped.empty());

        // deterministic lexicographic order
        const auto again = scan_directory(tmp.path.string());
        REQUIRE(manifest_to_csv(again.manifest) == manifest_to_csv(scan.manifest));
    }

    SECTION("unreadable root is an I/O error") {
        REQUIRE_THROWS_AS(scan_directory("/nonexistent/histofuse/root"), IoError);
    }
}

TEST_CASE("manifest CSV round trip") {
    Rng rng(99);
    Manifest m;
    for (int i = 0; i < 50; ++i) {
        BiopsyRecord r = random_record(rng);
        r.path = "/data/" + format_breakhis_filename(r);
        m.records.push_back(r);
    }
    const std::string csv = manifest_to_csv(m);
    std::istringstream in(csv);
    const Manifest back = manifest_from_csv(in);
    REQUIRE(back.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        REQUIRE(back.records[i] == m.records[i]);
        REQUIRE(back.records[i].path == m.records[i].path);
    }

    SECTION("header mismatch and bad rows are parse errors with line numbers") {
        std::istringstream bad1("wrong,header\n");
        REQUIRE_THROWS_AS(manifest_from_csv(bad1), ParseError);
        std::istringstream bad2(std::string(kManifestHeader) + "\na,b,c\n");
        try {
            manifest_from_csv(bad2);
            FAIL("expected parse error");
        } catch (const ParseError& e) {
            REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
}

TEST_CASE("split_by_magnification") {
    Rng rng(111);

    SECTION("a 40X-only manifest leaves the other groups empty") {
        Manifest m;
        for (int i = 0; i < 5; ++i) {
            BiopsyRecord r = random_record(rng);
            r.magnification = 40;
            r.path = "p" + std::to_string(i);
            m.records.push_back(r);
        }
        auto groups = split_by_magnification(m);
        REQUIRE(groups[40].size() == 5);
        REQUIRE(groups[100].size() == 0);
        REQUIRE(groups[200].size() == 0);
        REQUIRE(groups[400].size() == 0);
    }

    SECTION("partition: sizes sum and membership follows the field, 1000 records") {
        Manifest m;
        for (int i = 0; i < 1000; ++i) {
            BiopsyRecord r = random_record(rng);
            r.path = "p" + std::to_string(i);
            m.records.push_back(r);
        }
        auto groups = split_by_magnification(m);
        std::size_t total = 0;
        for (const auto& [mag, part] : groups) {
            total += part.size();
            for (const auto& r : part.records) REQUIRE(r.magnification == mag);
        }
        REQUIRE(total == m.size());
    }
}

TEST_CASE("balance_classes") {
    auto manifest_with = [](std::map<std::string, std::size_t> counts) {
        Manifest m;
        int i = 0;
        for (const auto& [subtype, n] : counts) {
            const bool benign = subtype_matches_class(subtype, TumorClass::benign);
            for (std::size_t j = 0; j < n; ++j) {
                BiopsyRecord r;
                r.method = "SOB";
                r.tumor_class = benign ? TumorClass::benign : TumorClass::malignant;
                r.subtype = subtype;
                r.patient_id = "14-1000";
                r.magnification = 40;
                r.seq = ++i;
                r.path = subtype + "_" + std::to_string(j);
                m.records.push_back(r);
            }
        }
        return m;
    };

    SECTION("classes above the target are capped, smaller classes pass through") {
        const auto balanced = balance_classes(manifest_with({{"A", 500}, {"F", 300}}), 300, 5);
        const auto counts = balanced.counts_by_subtype();
        REQUIRE(counts.at("A") == 300);
        REQUIRE(counts.at("F") == 300);

        const auto small = balance_classes(manifest_with({{"A", 120}}), 300, 5);
        REQUIRE(small.counts_by_subtype().at("A") == 120);
    }

    SECTION("the same seed selects identically; within-class order is preserved") {
        const auto m = manifest_with({{"A", 50}, {"DC", 80}});
        const auto b1 = balance_classes(m, 20, 9);
        const auto b2 = balance_classes(m, 20, 9);
        REQUIRE(manifest_to_csv(b1) == manifest_to_csv(b2));

        std::size_t last_a = 0, last_dc = 0;
        for (const auto& r : b1.records) {
            const std::size_t idx = std::stoul(r.path.substr(r.path.find('_') + 1));
            if (r.subtype == "A") {
                REQUIRE((last_a == 0 || idx > last_a));
                last_a = idx;
            } else {
                REQUIRE((last_dc == 0 || idx > last_dc));
                last_dc = idx;
            }
        }
    }
}

TEST_CASE("stratified_split") {
    Rng rng(131);
    auto make_manifest = [&](std::size_t n) {
        Manifest m;
        for (std::size_t i = 0; i < n; ++i) {
            BiopsyRecord r = random_record(rng);
            r.path = "p" + std::to_string(i);
            m.records.push_back(r);
        }
        return m;
    };

    SECTION("10 records of one class at 0.2 split 8/2") {
        Manifest m;
        for (int i = 0; i < 10; ++i) {
            BiopsyRecord r;
            r.method = "SOB";
            r.tumor_class = TumorClass::benign;
            r.subtype = "A";
            r.patient_id = "14-1";
            r.magnification = 40;
            r.seq = i + 1;
            r.path = "p" + std::to_string(i);
            m.records.push_back(r);
        }
        const auto split = stratified_split(m, 0.2, 3);
        REQUIRE(split.train.size() == 8);
        REQUIRE(split.val.size() == 2);
    }

    SECTION("class proportions in val match floor(n*fraction) per class") {
        const auto m = make_manifest(400);
        const auto split = stratified_split(m, 0.2, 7);
        const auto total = m.counts_by_subtype();
        const auto val = split.val.counts_by_subtype();
        for (const auto& [subtype, n] : total) {
            const std::size_t expected = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n)));
            const std::size_t got = val.count(subtype) ? val.at(subtype) : 0;
            REQUIRE(got == expected);
        }
    }

    SECTION("disjointness and union over 1000 random manifests") {
        for (int trial = 0; trial < 1000; ++trial) {
            const auto m = make_manifest(5 + rng.uniform_index(40));
            const auto split = stratified_split(m, 0.2, trial);
            REQUIRE(split.train.size() + split.val.size() == m.size());
            std::set<std::string> train_paths, val_paths;
            for (const auto& r : split.train.records) train_paths.insert(r.path);
            for (const auto& r : split.val.records) val_paths.insert(r.path);
            for (const auto& p : val_paths) REQUIRE(train_paths.count(p) == 0);
            REQUIRE(train_paths.size() + val_paths.size() == m.size());
        }
    }

    SECTION("a singleton class stays in train with a warning") {
        Manifest m;
        BiopsyRecord r;
        r.method = "SOB";
        r.tumor_class = TumorClass::benign;
        r.subtype = "PT";
        r.patient_id = "14-2";
        r.magnification = 40;
        r.seq = 1;
        r.path = "only";
        m.records.push_back(r);
        const auto split = stratified_split(m, 0.5, 1);
        REQUIRE(split.train.size() == 1);
        REQUIRE(split.val.size() == 0);
        REQUIRE_FALSE(split.warnings.empty());
    }

    SECTION("patient overlap is reported") {
        Manifest m;
        for (int i = 0; i < 10; ++i) {
            BiopsyRecord r;
            r.method = "SOB";
            r.tumor_class = TumorClass::benign;
            r.subtype = "A";
            r.patient_id = "14-7";  // one patient everywhere: leakage guaranteed
            r.magnification = 40;
            r.seq = i + 1;
            r.path = "p" + std::to_string(i);
            m.records.push_back(r);
        }
        const auto split = stratified_split(m, 0.2, 2);
        REQUIRE(split.leaked_patients == std::vector<std::string>{"14-7"});
    }
}

TEST_CASE("load_image") {
    TempDir tmp;

    SECTION("an all-255 image loads as all 1.0") {
        RgbImage img;
        img.width = img.height = 8;
        img.pixels.assign(8 * 8 * 3, 255);
        const auto p = (tmp.path / "white.ppm").string();
        write_ppm(p, img);
        const auto t = load_image<float>(p, 8);
        for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == 1.0f);
    }

    SECTION("constant gray stays constant through any resize") {
        RgbImage img;
        img.width = img.height = 10;
        img.pixels.assign(10 * 10 * 3, 100);
        const auto p = (tmp.path / "gray.ppm").string();
        write_ppm(p, img);
        for (const std::size_t target : {4ul, 10ul, 23ul}) {
            const auto t = load_image<float>(p, target);
            REQUIRE(t.shape() == std::vector<std::size_t>{target, target, 3});
            for (std::size_t i = 0; i < t.numel(); ++i)
                REQUIRE(t[i] == Catch::Approx(100.0 / 255.0).epsilon(1e-6));
        }
    }

    SECTION("a 2x2 checkerboard down-resized to 1x1 is 0.5 (bilinear average)") {
        RgbImage img;
        img.width = img.height = 2;
        img.pixels.assign(2 * 2 * 3, 0);
        for (std::size_t c = 0; c < 3; ++c) {
            img.at(0, 1, c) = 255;
            img.at(1, 0, c) = 255;
        }
        const auto p = (tmp.path / "check.ppm").string();
        write_ppm(p, img);
        const auto t = load_image<float>(p, 1);
        for (std::size_t c = 0; c < 3; ++c) REQUIRE(t[c] == Catch::Approx(0.5).epsilon(1e-6));
    }

    SECTION("undecodable bytes are a format error") {
        const auto p = (tmp.path / "bogus.png").string();
        std::ofstream(p) << "definitely not an image";
        REQUIRE_THROWS_AS(load_image<float>(p, 8), ParseError);
    }

    SECTION("output always lies in [0,1], at any resize") {
        Rng rng(97);
        for (int trial = 0; trial < 10; ++trial) {
            RgbImage img;
            img.width = 3 + rng.uniform_index(12);
            img.height = 3 + rng.uniform_index(12);
            img.pixels.resize(img.width * img.height * 3);
            for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_index(256));
            const auto p = (tmp.path / ("r" + std::to_string(trial) + ".ppm")).string();
            write_ppm(p, img);
            const auto t = load_image<float>(p, 1 + rng.uniform_index(20));
            for (std::size_t i = 0; i < t.numel(); ++i) {
                REQUIRE(t[i] >= 0.0f);
                REQUIRE(t[i] <= 1.0f);
            }
        }
    }

    SECTION("content is sniffed: PPM bytes under a .png name load fine") {
        RgbImage img;
        img.width = img.height = 4;
        img.pixels.assign(4 * 4 * 3, 128);
        const auto p = (tmp.path / "SOB_B_A-14-1-40-001.png").string();
        write_ppm(p, img);
        REQUIRE(load_image<float>(p, 4).numel() == 48);
    }
}

TEST_CASE("augment") {
    Rng img_rng(7);
    const auto img = oracles::random_tensor<float>(img_rng, {16, 16, 3}, 0.0, 1.0);

    SECTION("all ranges zero with flip off is the identity") {
        AugmentationConfig cfg;
        cfg.width_shift = cfg.height_shift = cfg.shear = cfg.zoom = 0.0;
        cfg.horizontal_flip = false;
        Rng rng(3);
        const auto out = augment(img, cfg, rng);
        for (std::size_t i = 0; i < img.numel(); ++i) REQUIRE(out[i] == img[i]);
    }

    SECTION("flip applied twice restores the original image") {
        const auto flipped = flip_horizontal(flip_horizontal(img));
        for (std::size_t i = 0; i < img.numel(); ++i) REQUIRE(flipped[i] == img[i]);
    }

    SECTION("pure translation moves a delta pixel by the sampled offset") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor<float> delta({21, 21, 1});
            const std::size_t py = 6 + rng.uniform_index(8), px = 6 + rng.uniform_index(8);
            delta[(py * 21 + px) * 1] = 1.0f;
            AugmentSample s;
            s.tx = rng.uniform(-3.0, 3.0);
            s.ty = rng.uniform(-3.0, 3.0);
            const auto out = apply_augment(delta, s);
            std::size_t best = 0;
            for (std::size_t i = 1; i < out.numel(); ++i)
                if (out[i] > out[best]) best = i;
            const double out_y = static_cast<double>(best / 21);
            const double out_x = static_cast<double>(best % 21);
            REQUIRE(std::abs(out_x - (static_cast<double>(px) + s.tx)) <= 1.0);
            REQUIRE(std::abs(out_y - (static_cast<double>(py) + s.ty)) <= 1.0);
        }
    }

    SECTION("a fixed rng state makes augment a pure function") {
        AugmentationConfig cfg;
        Rng r1(5), r2(5);
        const auto a = augment(img, cfg, r1);
        const auto b = augment(img, cfg, r2);
        for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
    }

    SECTION("invalid fractions are rejected") {
        AugmentationConfig cfg;
        cfg.zoom = 1.0;
        Rng rng(1);
        REQUIRE_THROWS_AS(augment(img, cfg, rng), ConfigError);
    }
}

TEST_CASE("make_synthetic_dataset") {
    SECTION("the same seed reproduces the dataset bit for bit") {
        const auto a = make_synthetic_dataset<float>(4, 6, 32, 99);
        const auto b = make_synthetic_dataset<float>(4, 6, 32, 99);
        REQUIRE(a.labels == b.labels);
        for (std::size_t i = 0; i < a.images.size(); ++i)
            for (std::size_t j = 0; j < a.images[i].numel(); ++j)
                REQUIRE(a.images[i][j] == b.images[i][j]);
    }

    SECTION("nearest-centroid on raw pixels beats chance by 0.1") {
        const std::size_t k = 4, n = 30;
        const auto ds = make_synthetic_dataset<float>(k, n, 32, 7);
        // centroids from even-index images, evaluation on odd-index ones
        std::vector<Tensor<double>> centroids(k, Tensor<double>({32, 32, 3}));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < ds.images.size(); i += 2) {
            const auto c = static_cast<std::size_t>(ds.labels[i]);
            for (std::size_t j = 0; j < centroids[c].numel(); ++j)
                centroids[c][j] += static_cast<double>(ds.images[i][j]);
            ++counts[c];
        }
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < centroids[c].numel(); ++j)
                centroids[c][j] /= static_cast<double>(counts[c]);
        std::size_t correct = 0, total = 0;
        for (std::size_t i = 1; i < ds.images.size(); i += 2) {
            double best = 1e300;
            std::size_t best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                double d = 0;
                for (std::size_t j = 0; j < centroids[c].numel(); ++j) {
                    const double diff = static_cast<double>(ds.images[i][j]) - centroids[c][j];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            if (best_c == static_cast<std::size_t>(ds.labels[i])) ++correct;
            ++total;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(total);
        REQUIRE(acc > 1.0 / static_cast<double>(k) + 0.1);
    }

    SECTION("pairwise mean-image distance stays above a fixed floor") {
        const std::size_t k = 8, n = 10;
        const auto ds = make_synthetic_dataset<float>(k, n, 32, 11);
        std::vector<Tensor<double>> means(k, Tensor<double>({32, 32, 3}));
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            const auto c = static_cast<std::size_t>(ds.labels[i]);
            for (std::size_t j = 0; j < means[c].numel(); ++j)
                means[c][j] += static_cast<double>(ds.images[i][j]) / static_cast<double>(n);
        }
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = a + 1; b < k; ++b) {
                double d = 0;
                for (std::size_t j = 0; j < means[a].numel(); ++j) {
                    const double diff = means[a][j] - means[b][j];
                    d += diff * diff;
                }
                REQUIRE(std::sqrt(d) > 3.0);
            }
    }

    SECTION("binary collapse and category slicing") {
        const auto ds = make_synthetic_dataset<float>(8, 3, 16, 5);
        const auto binary = to_binary_superclasses(ds);
        REQUIRE(binary.num_classes == 2);
        for (std::size_t i = 0; i < ds.labels.size(); ++i)
            REQUIRE(binary.labels[i] == (ds.labels[i] >= 4 ? 1 : 0));
        const auto benign = slice_category(ds, false);
        const auto malignant = slice_category(ds, true);
        REQUIRE(benign.size() == 12);
        REQUIRE(malignant.size() == 12);
        for (const int l : benign.labels) REQUIRE((l >= 0 && l < 4));
        for (const int l : malignant.labels) REQUIRE((l >= 0 && l < 4));
    }
}
