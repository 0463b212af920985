#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dpmil/config.hpp"
#include "dpmil/pipeline.hpp"

using namespace dpmil;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_config(const std::string& name, const std::string& body) {
    const fs::path path = fs::temp_directory_path() / name;
    write_file(path, body);
    return path;
}

} // namespace

TEST_CASE("defaults survive an empty config") {
    const auto path = write_temp_config("dpmil_cfg_empty.ini", "# nothing here\n\n");
    const RunConfig cfg = load_config(path);
    REQUIRE(cfg.seed == 42);
    REQUIRE(cfg.gen.bags_per_class == std::array<std::size_t, 4>{25, 30, 25, 20});
    REQUIRE(cfg.split_ratio == 0.8);
    REQUIRE(cfg.coteach_epochs == 20);
    REQUIRE(cfg.coteach_batch_size == 32);
    REQUIRE(cfg.lof.k == 20);
    REQUIRE(cfg.lof.cap_per_class == 2000);
    REQUIRE(cfg.mil_alpha == 0.5);
    REQUIRE(cfg.fusion_grid_step == 0.1);
    for (const auto& [stage, enabled] : cfg.stages) REQUIRE(enabled);
    fs::remove(path);
}

TEST_CASE("every section parses") {
    const auto path = write_temp_config("dpmil_cfg_full.ini",
                                        "seed = 7\n"
                                        "out = elsewhere\n"
                                        "gen.bags_per_class = 1,2,3,4\n"
                                        "gen.instances_min = 5\n"
                                        "gen.instances_max = 6\n"
                                        "gen.noise_fraction = 0.25\n"
                                        "gen.separation = 3.5\n"
                                        "gen.spread = 0.8\n"
                                        "gen.feature_dim = 12\n"
                                        "gen.resolution = 20X\n"
                                        "split.ratio = 0.75\n"
                                        "resample.enabled = off\n"
                                        "resample.target_per_class = 99\n"
                                        "resample.augment_sigma = 0.2\n"
                                        "coteach.epochs = 3\n"
                                        "coteach.batch_size = 16\n"
                                        "coteach.lr0 = 0.2\n"
                                        "coteach.tau = 0.1\n"
                                        "coteach.ramp_epochs = 2\n"
                                        "coteach.conf_threshold = 0.6\n"
                                        "coteach.hidden = 8,4\n"
                                        "lof.k = 7\n"
                                        "lof.theta = 1.2\n"
                                        "lof.cap_per_class = 500\n"
                                        "mil.alpha = 2.0\n"
                                        "mil.epochs = 4\n"
                                        "mil.batch_size = 8\n"
                                        "mil.lr0 = 0.05\n"
                                        "fusion.grid_step = 0.2\n"
                                        "fusion.alpha = 1.0\n"
                                        "fusion.objective = accuracy\n"
                                        "stages.fuse = off\n");
    const RunConfig cfg = load_config(path);
    REQUIRE(cfg.seed == 7);
    REQUIRE(cfg.out == "elsewhere");
    REQUIRE(cfg.gen.bags_per_class == std::array<std::size_t, 4>{1, 2, 3, 4});
    REQUIRE(cfg.gen.noise_fraction == 0.25);
    REQUIRE(cfg.gen.resolution_tag == "20X");
    REQUIRE(cfg.split_ratio == 0.75);
    REQUIRE_FALSE(cfg.resample_enabled);
    REQUIRE(cfg.resample_target == 99);
    REQUIRE(cfg.resample_augment_sigma == 0.2);
    REQUIRE(cfg.coteach_tau == 0.1);
    REQUIRE(cfg.hidden_dims == std::vector<std::size_t>{8, 4});
    REQUIRE(cfg.lof.k == 7);
    REQUIRE(cfg.lof.theta == 1.2);
    REQUIRE(cfg.mil_alpha == 2.0);
    REQUIRE(cfg.fusion_objective == FusionObjective::Accuracy);
    REQUIRE_FALSE(cfg.stages.at("fuse"));
    REQUIRE(cfg.stages.at("gen"));
    fs::remove(path);
}

TEST_CASE("auto sentinels derive from the generator section") {
    const auto path = write_temp_config("dpmil_cfg_auto.ini",
                                        "gen.noise_fraction = 0.33\n"
                                        "gen.spread = 2.0\n"
                                        "coteach.tau = auto\n"
                                        "resample.augment_sigma = auto\n");
    const RunConfig cfg = load_config(path);
    REQUIRE(cfg.effective_tau() == 0.33);
    REQUIRE(cfg.effective_augment_sigma() == Catch::Approx(0.1));
    fs::remove(path);
}

TEST_CASE("unknown keys and malformed lines carry line numbers") {
    const auto bad_key =
        write_temp_config("dpmil_cfg_badkey.ini", "seed = 1\ngen.bogus = 2\n");
    REQUIRE_THROWS_WITH(load_config(bad_key), Catch::Matchers::ContainsSubstring(":2"));
    REQUIRE_THROWS_WITH(load_config(bad_key), Catch::Matchers::ContainsSubstring("gen.bogus"));

    const auto no_eq = write_temp_config("dpmil_cfg_noeq.ini", "seed = 1\nnonsense line\n");
    REQUIRE_THROWS_WITH(load_config(no_eq), Catch::Matchers::ContainsSubstring(":2"));

    const auto bad_stage =
        write_temp_config("dpmil_cfg_badstage.ini", "stages.nonexistent = on\n");
    REQUIRE_THROWS_AS(load_config(bad_stage), ConfigError);

    const auto bad_bool =
        write_temp_config("dpmil_cfg_badbool.ini", "resample.enabled = maybe\n");
    REQUIRE_THROWS_AS(load_config(bad_bool), ConfigError);

    const auto bad_counts =
        write_temp_config("dpmil_cfg_counts.ini", "gen.bags_per_class = 1,2,3\n");
    REQUIRE_THROWS_AS(load_config(bad_counts), ConfigError);

    for (const auto& p : {bad_key, no_eq, bad_stage, bad_bool, bad_counts}) fs::remove(p);
}

TEST_CASE("run_tasks gives identical results for any thread count") {
    std::vector<double> one(16, 0.0), four(16, 0.0);
    auto work = [](std::size_t i) {
        Rng rng(derive_seed(100, "tasks", i));
        double acc = 0.0;
        for (int rep = 0; rep < 1000; ++rep) acc += rng.normal();
        return acc;
    };
    run_tasks(16, 1, [&](std::size_t i) { one[i] = work(i); });
    run_tasks(16, 4, [&](std::size_t i) { four[i] = work(i); });
    REQUIRE(one == four);
}

TEST_CASE("run_tasks propagates worker exceptions") {
    REQUIRE_THROWS_AS(run_tasks(8, 4,
                                [](std::size_t i) {
                                    if (i == 5) throw DataError("boom");
                                }),
                      DataError);
}
