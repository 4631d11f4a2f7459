#include "doctest.h"
#include "surt/config.h"
#include "surt/errors.h"

using namespace surt;

namespace {

std::string rejected_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults survive a serialize/parse round trip") {
  ExperimentConfig c;
  CHECK(parse_config(serialize_config(c)) == c);
}

TEST_CASE("non-default values survive a round trip") {
  ExperimentConfig c;
  c.data.noise = 0.25;
  c.data.silence = true;
  c.data.seed = 123456789012345ULL;
  c.model.encoder = "tt";
  c.model.chunk = 4;
  c.train.lr = 1.5e-4;
  c.train.warm_steps = 100;
  c.loss.assignment = "pit";
  c.loss.penalty = true;
  c.loss.alpha = 0.5;
  c.eval.thresholds = {1, 3, 12};
  const auto back = parse_config(serialize_config(c));
  CHECK(back == c);
  CHECK(back.train.lr == c.train.lr);
  CHECK(back.data.noise == c.data.noise);
  CHECK(back.eval.thresholds == c.eval.thresholds);
}

TEST_CASE("partial files keep defaults and allow comments") {
  const auto c = parse_config("# grid run\ntrain.steps = 10  # short\n\nloss.eos=false\n");
  CHECK(c.train.steps == 10);
  CHECK_FALSE(c.loss.eos);
  CHECK(c.data.vocab == 16);
  CHECK(c.data.min_delay == 12);
}

TEST_CASE("unknown, duplicate and malformed entries name the key") {
  CHECK(rejected_key("train.stepz = 3\n") == "train.stepz");
  CHECK(rejected_key("train.steps = 3\ntrain.steps = 4\n") == "train.steps");
  CHECK(rejected_key("train.steps = many\n") == "train.steps");
  CHECK(rejected_key("train.steps = -1\n") == "train.steps");
  CHECK(rejected_key("train.lr =\n") == "train.lr");
  CHECK(rejected_key("loss.eos = maybe\n") == "loss.eos");
  CHECK(rejected_key("loss.assignment = greedy\n") == "loss.assignment");
  CHECK(rejected_key("eval.thresholds = 5,x\n") == "eval.thresholds");
  CHECK(rejected_key("just text\n") == "line 1");
}

TEST_CASE("cross-field rules") {
  CHECK(rejected_key("model.encoder = tt\n") == "model.chunk");
  CHECK(rejected_key("model.chunk = 4\n") == "model.chunk");
  CHECK(rejected_key("loss.eos = false\nloss.penalty = true\n") == "loss.penalty");
  CHECK(rejected_key("train.steps = 10\ntrain.warm_steps = 11\n") == "train.warm_steps");
  CHECK(rejected_key("loss.eos = false\ntrain.warm_steps = 5\n") == "train.warm_steps");
  CHECK(rejected_key("data.min_tokens = 4\ndata.max_tokens = 3\n") == "data.max_tokens");
  CHECK(rejected_key("data.min_delay = 500\n") == "data.min_delay");
  CHECK(rejected_key("data.speakers = 1\n") == "data.speakers");
  CHECK(rejected_key("model.encoder = tt\nmodel.chunk = 4\n").empty());
}

TEST_CASE("penalty config is active only with eos and penalty both on") {
  LossConfig l;
  l.penalty = true;
  CHECK(l.penalty_config().enabled);
  CHECK(l.penalty_config().alpha == 2.0);
  CHECK(l.penalty_config().t_buffer == 3);
  l.eos = false;
  CHECK_FALSE(l.penalty_config().enabled);
}

TEST_CASE("missing config file is an io error") {
  CHECK_THROWS_AS(load_config("/nonexistent/surt.cfg"), IoError);
}
