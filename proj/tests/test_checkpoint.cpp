#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "relmap/checkpoint.hpp"
#include "relmap/trainer_supervised.hpp"

using namespace relmap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("relmap_ckpt_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

// A network with one finished task and one in-progress, partially
// trained task, so every checkpoint section is populated.
MaskedNetwork busy_network(Rng& rng, Adam* adam = nullptr) {
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 4}, rng);
  net.start_task(rng);
  Tensor x = Tensor::matrix(8, 6);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  std::vector<int> y = {0, 1, 2, 3, 0, 1, 2, 3};

  Adam local({});
  Adam& opt = adam != nullptr ? *adam : local;
  auto params = net.live_params(false);
  for (int step = 0; step < 5; ++step) {
    Tensor logits = net.forward(x, 0, Mode::kTrain);
    LossGrad lg = softmax_xent(logits, y);
    net.backward(lg.grad);
    opt.step(params);
  }
  net.prune_live(0.05);
  net.finish_task();

  net.start_task(rng);
  params = net.live_params(false);
  Tensor logits = net.forward(x, 1, Mode::kTrain);
  LossGrad lg = softmax_xent(logits, y);
  net.backward(lg.grad);
  opt.step(params);
  return net;
}

}  // namespace

TEST_CASE("checkpoint round-trips the network bit-exactly") {
  TempDir dir;
  Rng rng(11);
  Adam adam({});
  MaskedNetwork net = busy_network(rng, &adam);
  const std::string path = dir.file("ckpt.bin");
  save_checkpoint(path, net, &adam, &rng, "deadbeef");

  Checkpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.config_hash == "deadbeef");
  CHECK(ckpt.net.dims() == net.dims());
  CHECK(ckpt.net.completed_tasks() == 1);
  CHECK(ckpt.net.task_count() == 2);

  REQUIRE(ckpt.net.linears().size() == net.linears().size());
  for (std::size_t l = 0; l < net.linears().size(); ++l) {
    const MaskedLinear& a = net.linears()[l];
    const MaskedLinear& b = ckpt.net.linears()[l];
    CHECK(a.weights == b.weights);
    REQUIRE(a.final_masks.size() == b.final_masks.size());
    for (std::size_t t = 0; t < a.final_masks.size(); ++t) {
      CHECK(a.final_masks[t] == b.final_masks[t]);
    }
    REQUIRE(b.live.has_value());
    CHECK(a.live->raw == b.live->raw);
    CHECK(a.live->beta == b.live->beta);
    CHECK(a.live->pruned == b.live->pruned);
    CHECK(a.frozen.mask == b.frozen.mask);
  }
  REQUIRE(ckpt.net.bns().size() == net.bns().size());
  for (std::size_t l = 0; l < net.bns().size(); ++l) {
    const MaskedBatchNorm& a = net.bns()[l];
    const MaskedBatchNorm& b = ckpt.net.bns()[l];
    CHECK(a.scale == b.scale);
    CHECK(a.shift == b.shift);
    REQUIRE(a.run_mean.size() == b.run_mean.size());
    for (std::size_t t = 0; t < a.run_mean.size(); ++t) {
      CHECK(a.run_mean[t] == b.run_mean[t]);
      CHECK(a.run_var[t] == b.run_var[t]);
    }
    CHECK(a.live_scale->raw == b.live_scale->raw);
    CHECK(a.live_shift->raw == b.live_shift->raw);
    CHECK(a.eps == b.eps);
    CHECK(a.momentum == b.momentum);
  }

  // restored network computes identical logits in both modes and tasks
  Rng probe_rng(99);
  Tensor probe = Tensor::matrix(7, 6);
  for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = probe_rng.uniform();
  for (std::size_t task : {std::size_t{0}, std::size_t{1}}) {
    Tensor want = net.forward(probe, task, Mode::kEval);
    Tensor got = ckpt.net.forward(probe, task, Mode::kEval);
    CHECK(want == got);
  }
}

TEST_CASE("checkpoint round-trips optimizer and rng state") {
  TempDir dir;
  Rng rng(3);
  Adam adam({});
  MaskedNetwork net = busy_network(rng, &adam);
  const std::string path = dir.file("ckpt.bin");
  save_checkpoint(path, net, &adam, &rng, "h");

  Checkpoint ckpt = load_checkpoint(path);
  REQUIRE(ckpt.adam.has_value());
  CHECK(ckpt.adam->step_count() == adam.step_count());
  REQUIRE(ckpt.adam->slots().size() == adam.slots().size());
  for (std::size_t i = 0; i < adam.slots().size(); ++i) {
    CHECK(ckpt.adam->slots()[i].m == adam.slots()[i].m);
    CHECK(ckpt.adam->slots()[i].v == adam.slots()[i].v);
    CHECK(ckpt.adam->slots()[i].t == adam.slots()[i].t);
  }

  REQUIRE(!ckpt.rng_state.empty());
  Rng restored(0);
  restored.restore(ckpt.rng_state);
  for (int i = 0; i < 16; ++i) CHECK(restored.next_u64() == rng.next_u64());
}

TEST_CASE("optimizer and rng sections are optional") {
  TempDir dir;
  Rng rng(5);
  MaskedNetwork net = busy_network(rng);
  const std::string path = dir.file("bare.bin");
  save_checkpoint(path, net, nullptr, nullptr, "");
  Checkpoint ckpt = load_checkpoint(path);
  CHECK(!ckpt.adam.has_value());
  CHECK(ckpt.rng_state.empty());
}

TEST_CASE("checkpoint loader rejects damaged files") {
  TempDir dir;
  Rng rng(7);
  MaskedNetwork net = busy_network(rng);
  const std::string path = dir.file("ckpt.bin");
  save_checkpoint(path, net, nullptr, &rng, "h");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir.file("absent.bin")), IoError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                         FormatError);
  }
  SUBCASE("unsupported version") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                         FormatError);
  }
  SUBCASE("truncated") {
    const auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                         FormatError);
  }
}
