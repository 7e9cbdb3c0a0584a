#include <doctest.h>

#include <nlohmann/json.hpp>

#include <random>

#include "gtrans/backbones.hpp"
#include "gtrans/serialize.hpp"
#include "gtrans/training.hpp"
#include "oracles.hpp"

using namespace gtrans;

TEST_SUITE("backbones") {

TEST_CASE("tiny_test pyramid shapes on 64x64") {
  BackboneConfig cfg{BackboneFamily::tiny_test, {1, 2, 3}, false};
  Backbone net = Backbone::build(cfg, 1);
  std::mt19937_64 rng(2);
  Var batch(randu({2, 3, 64, 64}, -1, 1, rng));
  auto pyr = net.extract_pyramid(batch);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].val().shape() == std::vector<int>{2, 8, 16, 16});
  CHECK(pyr[1].val().shape() == std::vector<int>{2, 16, 8, 8});
  CHECK(pyr[2].val().shape() == std::vector<int>{2, 32, 4, 4});
}

TEST_CASE("resnet34 pyramid shapes on 224x224") {
  BackboneConfig cfg{BackboneFamily::resnet34, {1, 2, 3}, false};
  Backbone net = Backbone::build(cfg, 3);
  net.set_training(false);
  std::mt19937_64 rng(4);
  Var batch(randu({1, 3, 224, 224}, -1, 1, rng));
  auto pyr = net.extract_pyramid(batch);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].val().shape() == std::vector<int>{1, 64, 56, 56});
  CHECK(pyr[1].val().shape() == std::vector<int>{1, 128, 28, 28});
  CHECK(pyr[2].val().shape() == std::vector<int>{1, 256, 14, 14});
}

TEST_CASE("wide_resnet50_2 pyramid shapes on 224x224") {
  BackboneConfig cfg{BackboneFamily::wide_resnet50_2, {1, 2, 3}, false};
  Backbone net = Backbone::build(cfg, 5);
  net.set_training(false);
  std::mt19937_64 rng(6);
  Var batch(randu({1, 3, 224, 224}, -1, 1, rng));
  auto pyr = net.extract_pyramid(batch);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].val().shape() == std::vector<int>{1, 256, 56, 56});
  CHECK(pyr[1].val().shape() == std::vector<int>{1, 512, 28, 28});
  CHECK(pyr[2].val().shape() == std::vector<int>{1, 1024, 14, 14});
}

TEST_CASE("guide and student pyramids agree in shape layer by layer") {
  BackboneConfig cfg{BackboneFamily::tiny_test, {1, 2, 3}, true};
  Backbone guide = Backbone::build(cfg, 7);
  guide.freeze();
  BackboneConfig scfg = cfg;
  scfg.pretrained = false;
  Backbone student = Backbone::build(scfg, 8);
  std::mt19937_64 rng(9);
  Var batch(randu({3, 3, 64, 64}, -1, 1, rng));
  auto gp = guide.extract_pyramid(batch);
  auto sp = student.extract_pyramid(batch);
  REQUIRE(gp.size() == sp.size());
  for (size_t l = 0; l < gp.size(); ++l) CHECK(gp[l].val().shape() == sp[l].val().shape());
}

TEST_CASE("frozen guide is deterministic and a fixture") {
  BackboneConfig cfg{BackboneFamily::tiny_test, {1, 2, 3}, true};
  Backbone a = Backbone::build(cfg, 100);
  Backbone b = Backbone::build(cfg, 999);  // run seed must not matter for the fixture
  a.freeze();
  b.freeze();
  CHECK(a.checksum() == b.checksum());
  std::mt19937_64 rng(10);
  Tensor input = randu({1, 3, 64, 64}, 0, 1, rng);
  Tensor outa = a.extract_pyramid(Var(input))[2].val();
  Tensor outb = b.extract_pyramid(Var(input))[2].val();
  Tensor outa2 = a.extract_pyramid(Var(input))[2].val();
  for (int64_t i = 0; i < outa.size(); ++i) {
    CHECK(outa[i] == outb[i]);
    CHECK(outa[i] == outa2[i]);
  }
  // no gradient bookkeeping on the frozen path
  Var tracked(input, true);
  auto pyr = a.extract_pyramid(tracked);
  CHECK_FALSE(pyr[0].requires_grad());
}

TEST_CASE("freeze contract under optimizer steps") {
  BackboneConfig gcfg{BackboneFamily::tiny_test, {1, 2, 3}, true};
  Backbone guide = Backbone::build(gcfg, 11);
  guide.freeze();
  guide.freeze();  // idempotent
  CHECK(guide.frozen());
  BackboneConfig scfg{BackboneFamily::tiny_test, {1, 2, 3}, false};
  Backbone student = Backbone::build(scfg, 12);

  uint64_t guide_sum_before = guide.checksum();
  uint64_t student_sum_before = student.checksum();

  ParamList both = guide.parameters("guide");
  ParamList sp = student.parameters("student");
  both.insert(both.end(), sp.begin(), sp.end());
  AdamOptimizer opt(both, 0.0);

  std::mt19937_64 rng(13);
  for (int step = 0; step < 10; ++step) {
    Var batch(randu({2, 3, 64, 64}, -1, 1, rng));
    opt.zero_grad();
    auto gp = guide.extract_pyramid(batch);
    auto spyr = student.extract_pyramid(batch);
    // nonzero-gradient loss through the student only (guide records no tape)
    Var loss;
    for (auto& layer : spyr) {
      Var term = sum_all(mul(layer, layer));
      loss = loss.defined() ? add(loss, term) : term;
    }
    backward(loss);
    opt.step(1e-2);
  }
  CHECK(guide.checksum() == guide_sum_before);
  CHECK(student.checksum() != student_sum_before);
}

TEST_CASE("input size must match the backbone stride structure") {
  BackboneConfig cfg{BackboneFamily::tiny_test, {1, 2, 3}, false};
  Backbone net = Backbone::build(cfg, 14);
  CHECK_THROWS_AS((void)net.extract_pyramid(Var(Tensor::zeros({1, 3, 50, 50}))), ShapeError);
  CHECK_THROWS_AS((void)net.extract_pyramid(Var(Tensor::zeros({1, 4, 64, 64}))), ShapeError);
}

TEST_CASE("critical layer validation") {
  CHECK_THROWS_AS((void)Backbone::build({BackboneFamily::tiny_test, {1, 2, 4}, false}, 1),
                  ConfigError);
  CHECK_THROWS_AS((void)Backbone::build({BackboneFamily::tiny_test, {2, 2}, false}, 1),
                  ConfigError);
  CHECK_THROWS_AS((void)Backbone::build({BackboneFamily::tiny_test, {}, false}, 1), ConfigError);
  // stage 4 exists on resnet34
  Backbone net = Backbone::build({BackboneFamily::resnet34, {2, 3, 4}, false}, 1);
  CHECK(net.critical_channels() == std::vector<int>{128, 256, 512});
}

TEST_CASE("weight round-trip through the container format") {
  BackboneConfig cfg{BackboneFamily::tiny_test, {1, 2, 3}, false};
  Backbone net = Backbone::build(cfg, 15);
  uint64_t sum = net.checksum();
  std::vector<NamedTensor> tensors;
  for (const auto& p : net.parameters()) tensors.push_back({p.name, p.var.val()});
  for (auto& b : net.buffers()) tensors.push_back({b.name, *b.tensor});
  std::string path = "/tmp/gtrans_backbone_test.gtw";
  write_tensor_container(path, {{"kind", "backbone_weights"}}, tensors);
  Backbone other = Backbone::build(cfg, 999);
  CHECK(other.checksum() != sum);
  other.load_weights(path);
  CHECK(other.checksum() == sum);
}

}  // TEST_SUITE
