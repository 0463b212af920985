#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "dpmil/lof.hpp"
#include "support/lof_oracle.hpp"

using namespace dpmil;

namespace {

std::vector<std::vector<double>> gaussian_cloud(std::size_t n, std::size_t dim, double spread,
                                                Rng& rng,
                                                const std::vector<double>& center = {}) {
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim, 0.0));
    for (auto& p : pts)
        for (std::size_t j = 0; j < dim; ++j)
            p[j] = (center.empty() ? 0.0 : center[j]) + rng.normal(0.0, spread);
    return pts;
}

std::vector<Candidate> as_candidates(const std::vector<std::vector<double>>& pts) {
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Candidate c;
        c.bag_id = "b" + std::to_string(i);
        c.instance_index = i;
        c.feature = pts[i];
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace

TEST_CASE("four corners of the unit square all score exactly 1") {
    const std::vector<std::vector<double>> square{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (double s : lof_scores(square, 2)) REQUIRE(s == 1.0);
}

TEST_CASE("identical points follow the duplicate convention") {
    const std::vector<std::vector<double>> dup(6, std::vector<double>{3.0, -1.0});
    for (double s : lof_scores(dup, 3)) REQUIRE(s == 1.0);
}

TEST_CASE("a far outlier scores high, cluster members stay near 1") {
    Rng rng(14);
    auto pts = gaussian_cloud(20, 3, 1.0, rng);
    pts.push_back({10.0, 10.0, 10.0});
    const auto scores = lof_scores(pts, 5);
    REQUIRE(scores.back() > 2.0);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) REQUIRE(scores[i] < 1.3);
}

TEST_CASE("lof_scores validates inputs") {
    const std::vector<std::vector<double>> tiny(3, std::vector<double>{0.0});
    REQUIRE_THROWS_AS(lof_scores(tiny, 3), ArgumentError);
    REQUIRE_THROWS_AS(lof_scores(tiny, 0), ArgumentError);
}

TEST_CASE("lof_scores matches the brute-force oracle on random configurations") {
    Rng rng(1234);
    for (int rep = 0; rep < 25; ++rep) {
        const std::size_t k = std::vector<std::size_t>{2, 5, 10, 20}[rng.index(4)];
        const std::size_t n = k + 1 + rng.index(120);
        const std::size_t dim = 1 + rng.index(8);
        auto pts = gaussian_cloud(n, dim, 1.0 + rng.uniform(), rng);
        // sprinkle a few outliers and the occasional duplicate
        for (std::size_t i = 0; i < n / 10; ++i)
            for (auto& v : pts[rng.index(n)]) v *= 8.0;
        if (n > 2) pts[1] = pts[0];
        const auto fast = lof_scores(pts, k);
        const auto slow = lof_oracle::scores(pts, k);
        for (std::size_t i = 0; i < n; ++i) {
            if (std::isinf(slow[i])) REQUIRE(std::isinf(fast[i]));
            else REQUIRE(fast[i] == Catch::Approx(slow[i]).margin(1e-9));
        }
    }
}

TEST_CASE("scores are invariant under translation, rotation and scaling") {
    Rng rng(77);
    auto pts = gaussian_cloud(40, 2, 1.5, rng);
    pts.push_back({9.0, -9.0});
    const auto base = lof_scores(pts, 5);

    auto translated = pts;
    for (auto& p : translated) {
        p[0] += 13.5;
        p[1] -= 4.25;
    }
    const auto t = lof_scores(translated, 5);

    const double angle = 0.73;
    auto rotated = pts;
    for (auto& p : rotated) {
        const double x = p[0], y = p[1];
        p[0] = std::cos(angle) * x - std::sin(angle) * y;
        p[1] = std::sin(angle) * x + std::cos(angle) * y;
    }
    const auto r = lof_scores(rotated, 5);

    for (std::size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(t[i] == Catch::Approx(base[i]).margin(1e-9));
        REQUIRE(r[i] == Catch::Approx(base[i]).margin(1e-9));
    }

    for (double scale : {0.5, 3.0}) {
        auto scaled = pts;
        for (auto& p : scaled)
            for (auto& v : p) v *= scale;
        const auto s = lof_scores(scaled, 5);
        for (std::size_t i = 0; i < pts.size(); ++i)
            REQUIRE(std::abs(s[i] - base[i]) < 1e-9);
    }
}

TEST_CASE("filter_class keeps a tight cluster intact") {
    Rng rng(14000);
    const auto cands = as_candidates(gaussian_cloud(60, 4, 0.5, rng));
    LofParams params;
    params.k = 10;
    auto [kept, report] = filter_class(cands, 0, params);
    REQUIRE(kept.size() == cands.size());
    REQUIRE(report.dropped == 0);
    REQUIRE_FALSE(report.pass_through);
}

TEST_CASE("filter_class removes background faster than cluster members") {
    Rng rng(9);
    auto pts = gaussian_cloud(140, 4, 1.0, rng);
    const std::size_t n_cluster = pts.size();
    auto bg = gaussian_cloud(60, 4, 3.0, rng, {6.0, 6.0, 0.0, 0.0});
    pts.insert(pts.end(), bg.begin(), bg.end());
    auto cands = as_candidates(pts);
    LofParams params;
    params.k = 10;
    params.theta = 1.3;
    auto [kept, report] = filter_class(cands, 0, params);
    std::size_t cluster_kept = 0, bg_kept = 0;
    for (const auto& c : kept)
        (c.instance_index < n_cluster ? cluster_kept : bg_kept)++;
    const double cluster_removal = 1.0 - double(cluster_kept) / double(n_cluster);
    const double bg_removal = 1.0 - double(bg_kept) / double(bg.size());
    REQUIRE(bg_removal > cluster_removal);
}

TEST_CASE("filter_class passes through when the class is too small") {
    Rng rng(2);
    const auto cands = as_candidates(gaussian_cloud(12, 3, 1.0, rng));
    LofParams params;
    params.k = 20;
    auto [kept, report] = filter_class(cands, 1, params);
    REQUIRE(report.pass_through);
    REQUIRE(kept.size() == 12);
    REQUIRE(report.kept == 12);
    REQUIRE(report.dropped == 0);
}

TEST_CASE("filter_class caps oversized candidate sets before scoring") {
    Rng rng(6);
    const auto cands = as_candidates(gaussian_cloud(2500, 3, 1.0, rng));
    LofParams params;
    params.k = 20;
    params.cap_per_class = 2000;
    params.seed = 31;
    auto [kept, report] = filter_class(cands, 2, params);
    REQUIRE(report.input_count == 2500);
    REQUIRE(report.capped_count == 2000);
    REQUIRE(report.kept + report.dropped == 2000);
    REQUIRE(kept.size() == report.kept);
}

TEST_CASE("raising theta never removes a previously kept candidate") {
    Rng rng(18);
    auto pts = gaussian_cloud(80, 3, 1.0, rng);
    pts.push_back({7.0, 7.0, 7.0});
    pts.push_back({-6.0, 5.0, -7.0});
    const auto cands = as_candidates(pts);
    LofParams lo;
    lo.k = 8;
    lo.theta = 1.2;
    LofParams hi = lo;
    hi.theta = 1.8;
    auto [kept_lo, rep_lo] = filter_class(cands, 0, lo);
    auto [kept_hi, rep_hi] = filter_class(cands, 0, hi);
    std::set<std::size_t> hi_set;
    for (const auto& c : kept_hi) hi_set.insert(c.instance_index);
    for (const auto& c : kept_lo) REQUIRE(hi_set.count(c.instance_index) == 1);
}

TEST_CASE("lof params are validated") {
    LofParams bad;
    bad.k = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad.k = 30;
    bad.cap_per_class = 20;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad.cap_per_class = 2000;
    bad.theta = 0.5;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("denoise report round-trips") {
    DenoiseReport report;
    report.rows.push_back({0, 2500, 2000, 1800, 200, false, 1.5, 20});
    report.rows.push_back({1, 15, 15, 15, 0, true, 1.5, 20});
    const auto path = std::filesystem::temp_directory_path() / "dpmil_denoise_report.csv";
    write_denoise_report(report, path);
    const DenoiseReport loaded = read_denoise_report(path);
    REQUIRE(loaded.rows.size() == 2);
    REQUIRE(loaded.rows[0].input_count == 2500);
    REQUIRE(loaded.rows[0].capped_count == 2000);
    REQUIRE(loaded.rows[0].kept == 1800);
    REQUIRE(loaded.rows[0].dropped == 200);
    REQUIRE_FALSE(loaded.rows[0].pass_through);
    REQUIRE(loaded.rows[1].pass_through);
    std::filesystem::remove(path);
}
