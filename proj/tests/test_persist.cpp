#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tascforge/checkpoint.hpp"
#include "tascforge/config.hpp"

using namespace tascforge;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tascforge_persist_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

NetworkSpec demo_spec() {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 6;
  spec.input_c = 2;
  spec.layers = {LayerSpec::conv(3, 4, Activation::SELU, true),
                 LayerSpec::conv(1, 4, Activation::ReLU),
                 LayerSpec::maxpool(2, 2),
                 LayerSpec::flatten(),
                 LayerSpec::dense(5, Activation::ELU, true),
                 LayerSpec::dropout(0.4),
                 LayerSpec::output(3)};
  spec.residual_groups = {{0, 1}};
  spec.layers[0].trainable = false;
  return spec;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir tmp;
  auto spec = demo_spec();
  auto model = init_model(spec, 99);
  // perturb accumulators and running stats so non-trivial values round-trip
  for (auto& layer : model.layers) {
    for (auto& v : layer.acc_weight.values()) v = 0.123456789123456789;
    for (auto& v : layer.bn_var.values()) v = 2.5e-17;
  }

  auto path = (tmp.path / "model.tasc").string();
  save_checkpoint(path, spec, model);
  auto loaded = load_checkpoint(path);

  REQUIRE(loaded.spec.layers.size() == spec.layers.size());
  CHECK(loaded.spec.input_h == spec.input_h);
  CHECK(loaded.spec.residual_groups == spec.residual_groups);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    CHECK(loaded.spec.layers[i].kind == spec.layers[i].kind);
    CHECK(loaded.spec.layers[i].kernel == spec.layers[i].kernel);
    CHECK(loaded.spec.layers[i].stride == spec.layers[i].stride);
    CHECK(loaded.spec.layers[i].filters == spec.layers[i].filters);
    CHECK(loaded.spec.layers[i].neurons == spec.layers[i].neurons);
    CHECK(loaded.spec.layers[i].classes == spec.layers[i].classes);
    CHECK(loaded.spec.layers[i].activation == spec.layers[i].activation);
    CHECK(loaded.spec.layers[i].has_batchnorm == spec.layers[i].has_batchnorm);
    CHECK(loaded.spec.layers[i].trainable == spec.layers[i].trainable);
    CHECK(loaded.spec.layers[i].dropout_p == spec.layers[i].dropout_p);
    CHECK(tensors_equal(loaded.model.layers[i].weight, model.layers[i].weight));
    CHECK(tensors_equal(loaded.model.layers[i].bias, model.layers[i].bias));
    CHECK(tensors_equal(loaded.model.layers[i].bn_scale, model.layers[i].bn_scale));
    CHECK(tensors_equal(loaded.model.layers[i].bn_var, model.layers[i].bn_var));
    CHECK(tensors_equal(loaded.model.layers[i].acc_weight, model.layers[i].acc_weight));
    CHECK(tensors_equal(loaded.model.layers[i].acc_shift, model.layers[i].acc_shift));
  }

  // saving the loaded model reproduces the file byte for byte
  auto path2 = (tmp.path / "model2.tasc").string();
  save_checkpoint(path2, loaded.spec, loaded.model);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint error paths") {
  TempDir tmp;
  auto spec = demo_spec();
  auto model = init_model(spec, 1);
  auto path = (tmp.path / "model.tasc").string();
  save_checkpoint(path, spec, model);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    try {
      load_checkpoint(path);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadMagic);
    }
  }

  SUBCASE("truncation") {
    auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    try {
      load_checkpoint(path);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TruncatedFile);
    }
  }

  SUBCASE("missing file") {
    try {
      load_checkpoint((tmp.path / "nope.tasc").string());
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IoError);
    }
  }
}

TEST_CASE("config parsing honors defaults and overrides") {
  auto cfg = parse_config_text(R"(
# comment
seed = 7
out_dir = /tmp/x
data.classes = 3
backbone.layers = conv:3:16:relu:bn, pool:2:2, dense:8:tanh   # inline comment
space.conv_slots = 0
space.pool = 2,3
space.fc_slots = 1
space.fc.neurons = 64,128
bo.k0 = 3
bo.budget = 5
prune.rate = 0.1
)");
  CHECK(cfg.seed == 7);
  CHECK(cfg.out_dir == "/tmp/x");
  CHECK(cfg.data.classes == 3);
  REQUIRE(cfg.backbone_layers.size() == 3);
  CHECK(cfg.backbone_layers[0].kind == LayerKind::Conv);
  CHECK(cfg.backbone_layers[0].has_batchnorm);
  CHECK(cfg.backbone_layers[1].stride == 2);
  CHECK(cfg.backbone_layers[2].kind == LayerKind::Dense);
  CHECK(cfg.space.conv_slots == 0);
  CHECK(cfg.space.pool_slot);
  CHECK(cfg.space.pool.filter_size == std::vector<int>{2, 3});
  CHECK(cfg.space.fc.neurons == std::vector<int>{64, 128});
  CHECK(cfg.tune.k0 == 3);
  CHECK(cfg.prune.rate == 0.1);
  // untouched keys fall back to defaults
  CHECK(cfg.prune.min_diff == 0.02);
  CHECK(cfg.tune.candidates_per_step == 512);
}

TEST_CASE("config rejects unknown keys and bad values") {
  auto expect_invalid = [](const std::string& text) {
    try {
      parse_config_text(text);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
    }
  };
  expect_invalid("bo.k00 = 5\n");                 // typo -> unknown key
  expect_invalid("seed = abc\n");                 // not an integer
  expect_invalid("data.val_fraction = 1.5\n");    // out of range
  expect_invalid("prune.rate = 0\n");             // out of range
  expect_invalid("bo.k0 = 1\n");                  // below minimum
  expect_invalid("bo.k0 = 8\nbo.budget = 4\n");   // budget < k0
  expect_invalid("data.kind = csv\n");            // unsupported kind
  expect_invalid("backbone.layers = dense\n");    // malformed token
  expect_invalid("seed = 1\nseed = 2\n");         // duplicate key
  expect_invalid("novalue\n");                    // missing '='
}

TEST_CASE("residual group declarations parse") {
  auto cfg = parse_config_text(
      "backbone.layers = conv:3:8:relu, conv:1:8:relu, conv:1:8:relu\n"
      "backbone.residual = 0-1;1-2\n");
  REQUIRE(cfg.backbone_residual_groups.size() == 2);
  CHECK(cfg.backbone_residual_groups[0] == std::vector<std::size_t>{0, 1});
  CHECK(cfg.backbone_residual_groups[1] == std::vector<std::size_t>{1, 2});
}
