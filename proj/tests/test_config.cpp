#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>

#include "modfuser/config.hpp"
#include "modfuser/model.hpp"

using namespace modfuser;

namespace {

bool same_weights(const LossWeights& a, const LossWeights& b) {
    return a.alpha == b.alpha && a.beta == b.beta && a.gamma == b.gamma &&
           a.lambda1 == b.lambda1 && a.lambda2 == b.lambda2;
}

bool same_config(const RunConfig& a, const RunConfig& b) {
    return a.phantom.seed == b.phantom.seed && a.phantom.size == b.phantom.size &&
           a.phantom.min_ellipses == b.phantom.min_ellipses &&
           a.phantom.max_ellipses == b.phantom.max_ellipses &&
           a.phantom.lesion_prob == b.phantom.lesion_prob &&
           a.phantom.noise_sigma == b.phantom.noise_sigma &&
           a.phantom.modality_names == b.phantom.modality_names &&
           a.phantom.transfer_tables == b.phantom.transfer_tables &&
           a.gen.subjects == b.gen.subjects && a.gen.slices == b.gen.slices &&
           a.gen.min_foreground == b.gen.min_foreground &&
           a.split.train_frac == b.split.train_frac && a.split.val_frac == b.split.val_frac &&
           a.split.test_frac == b.split.test_frac && a.split.seed == b.split.seed &&
           a.train.epochs == b.train.epochs && a.train.batch == b.train.batch &&
           a.train.lr_g == b.train.lr_g && a.train.lr_d == b.train.lr_d &&
           same_weights(a.train.weights, b.train.weights) && a.train.mode == b.train.mode &&
           a.train.me_classic == b.train.me_classic && a.train.channels == b.train.channels &&
           a.train.depth == b.train.depth && a.train.heads == b.train.heads &&
           a.train.seed == b.train.seed &&
           a.train.checkpoint_every == b.train.checkpoint_every &&
           a.train.clip_norm == b.train.clip_norm &&
           a.train.disen_detach == b.train.disen_detach &&
           a.train.max_steps_per_epoch == b.train.max_steps_per_epoch &&
           a.train.val_max_slices == b.train.val_max_slices &&
           a.train.deterministic == b.train.deterministic && a.paths.data == b.paths.data &&
           a.paths.out == b.paths.out && a.paths.ckpt == b.paths.ckpt &&
           a.paths.resume == b.paths.resume;
}

}  // namespace

TEST_CASE("empty and default configs agree") {
    const RunConfig parsed = parse_config("");
    const RunConfig defaults;
    CHECK(same_config(parsed, defaults));
    CHECK(parsed.phantom.transfer_tables == PhantomSpec::default_transfer_tables());
    CHECK(parsed.train.epochs == 100);
    CHECK(parsed.train.batch == 24);
    CHECK(parsed.train.lr_g == 1e-4);
    CHECK(parsed.train.lr_d == 1e-5);
    CHECK(parsed.train.weights.alpha == 10.0);
    CHECK(parsed.train.weights.lambda1 == 0.25);
    CHECK(parsed.gen.subjects == 40);
    CHECK(parsed.gen.slices == 16);
    CHECK(parsed.split.train_frac == 0.8);
}

TEST_CASE("values, comments, and whitespace parse") {
    const std::string text =
        "# run setup\n"
        "\n"
        "[train]\n"
        "  epochs = 7\n"
        "lr_g=0.002\n"
        "mode = learnable-high-rec\n"
        "me_classic = true\n"
        "alpha = 50\n"
        "\n"
        "[paths]\n"
        "out = /tmp/my run dir/out\n"
        "ckpt =\n"
        "[gen]\n"
        "subjects = 3\n"
        "[split]\n"
        "seed = 9\n"
        "[phantom]\n"
        "noise_sigma = 0.01\n";
    const RunConfig cfg = parse_config(text);
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.train.lr_g == 0.002);
    CHECK(cfg.train.mode == MEMode::learnable_high_rec);
    CHECK(cfg.train.me_classic);
    CHECK(cfg.train.weights.alpha == 50.0);
    CHECK(cfg.train.batch == 24);  // untouched keys keep defaults
    CHECK(cfg.paths.out == "/tmp/my run dir/out");
    CHECK(cfg.paths.ckpt == "");
    CHECK(cfg.gen.subjects == 3);
    CHECK(cfg.split.seed == 9);
    CHECK(cfg.phantom.noise_sigma == 0.01);
}

TEST_CASE("every me mode name round-trips") {
    for (MEMode mode : {MEMode::single, MEMode::consecutive, MEMode::learnable,
                        MEMode::learnable_high_rec}) {
        const std::string text = std::string("[train]\nmode = ") + me_mode_name(mode) + "\n";
        CHECK(parse_config(text).train.mode == mode);
    }
    CHECK_THROWS_WITH_AS(parse_config("[train]\nmode = sideways\n"),
                         doctest::Contains("sideways"), ConfigError);
}

TEST_CASE("schema violations name the offending line") {
    CHECK_THROWS_WITH_AS(parse_config("[orbit]\n"), doctest::Contains("unknown section"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("epochs = 3\n"), doctest::Contains("before any"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train]\nepochz = 3\n"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[gen]\nslices = 1\nslices = 2\n"),
                         doctest::Contains("duplicate"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train]\n\n\nnonsense\n"), doctest::Contains("line 4"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train\n"), doctest::Contains("malformed"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[split]\n= 3\n"), doctest::Contains("empty key"),
                         ConfigError);
}

TEST_CASE("value errors are typed") {
    CHECK_THROWS_WITH_AS(parse_config("[train]\nepochs = soon\n"),
                         doctest::Contains("integer"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train]\nseed = -1\n"), doctest::Contains("unsigned"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train]\nlr_g = fast\n"), doctest::Contains("number"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train]\nme_classic = yes\n"),
                         doctest::Contains("true or false"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[phantom]\nmodalities = a,,b\n"),
                         doctest::Contains("empty list element"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[train]\nepochs = 99999999999999999999\n"),
                         doctest::Contains("integer"), ConfigError);
}

TEST_CASE("modality tables resolve by position with explicit overrides") {
    const auto defaults = PhantomSpec::default_transfer_tables();

    const RunConfig renamed = parse_config("[phantom]\nmodalities = x,y,z\n");
    REQUIRE(renamed.phantom.transfer_tables.size() == 3);
    CHECK(renamed.phantom.transfer_tables[0] == defaults[0]);
    CHECK(renamed.phantom.transfer_tables[2] == defaults[2]);

    const RunConfig overridden = parse_config(
        "[phantom]\nmodalities = x,y,z\ntable_y = -1,0.1,0.2,0.3,0.9\n");
    CHECK(overridden.phantom.transfer_tables[0] == defaults[0]);
    CHECK(overridden.phantom.transfer_tables[1] ==
          std::vector<double>{-1.0, 0.1, 0.2, 0.3, 0.9});

    // A fifth modality has no default table at its position.
    CHECK_THROWS_WITH_AS(parse_config("[phantom]\nmodalities = a,b,c,d,e\n"),
                         doctest::Contains("table_e"), ConfigError);

    CHECK_THROWS_WITH_AS(parse_config("[phantom]\ntable_q = -1,0.5\n"),
                         doctest::Contains("names no modality"), ConfigError);
}

TEST_CASE("render and parse are inverse") {
    RunConfig cfg;
    cfg.phantom.seed = 77;
    cfg.phantom.size = 32;
    cfg.phantom.noise_sigma = 0.0125;
    cfg.phantom.modality_names = {"t1", "t2", "fl"};
    cfg.phantom.transfer_tables = {PhantomSpec::default_transfer_tables()[0],
                                   PhantomSpec::default_transfer_tables()[1],
                                   {-1.0, 0.3, 0.4, 0.55, 0.8}};
    cfg.gen.subjects = 5;
    cfg.gen.slices = 2;
    cfg.split.train_frac = 0.6;
    cfg.split.val_frac = 0.2;
    cfg.split.test_frac = 0.2;
    cfg.train.epochs = 13;
    cfg.train.lr_g = 1.0 / 3.0;  // needs all 17 digits to survive
    cfg.train.mode = MEMode::learnable;
    cfg.train.clip_norm = 2.5;
    cfg.train.deterministic = false;
    cfg.paths.data = "packs/train.spk";
    cfg.paths.out = "runs/a";

    const std::string text = render_config(cfg);
    CHECK(render_config(cfg) == text);  // rendering is deterministic
    const RunConfig back = parse_config(text);
    CHECK(same_config(back, cfg));
    CHECK(back.train.lr_g == cfg.train.lr_g);

    const RunConfig defaults;
    CHECK(same_config(parse_config(render_config(defaults)), defaults));
}

TEST_CASE("load_config reads files and reports missing ones") {
    const std::string path = "test_config_tmp.cfg";
    {
        std::ofstream out(path, std::ios::binary);
        out << "[train]\nepochs = 3\n";
    }
    CHECK(load_config(path).train.epochs == 3);
    std::remove(path.c_str());
    CHECK_THROWS_WITH_AS(load_config("no_such_file.cfg"), doctest::Contains("cannot open"),
                         ConfigError);
}
