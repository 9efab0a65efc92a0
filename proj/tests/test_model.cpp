#include "fedsilo/model.hpp"

#include <cmath>

#include "doctest.h"

using namespace fedsilo;
using namespace fedsilo::model;
using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;

namespace {

LabeledBatch random_batch(Rng& rng, std::size_t b, std::size_t d, int classes) {
  LabeledBatch batch;
  batch.features = Matrix(b, d);
  for (double& v : batch.features.data()) v = rng.normal();
  batch.labels.resize(b);
  for (auto& label : batch.labels) label = static_cast<int>(rng.below(classes));
  return batch;
}

}  // namespace

TEST_CASE("uniform softmax loss is ln C") {
  const ModelSpec spec{{3, 4, 2}};
  ParamVector w{model_manifest(spec)};  // all-zero weights force equal logits
  Rng rng(5);
  const LabeledBatch batch = random_batch(rng, 8, 3, 2);
  CHECK(loss_value(w, batch, spec) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const ModelSpec spec5{{3, 4, 5}};
  ParamVector w5{model_manifest(spec5)};
  const LabeledBatch batch5 = random_batch(rng, 4, 3, 5);
  CHECK(loss_value(w5, batch5, spec5) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("duplicated sample batch has the same loss as the single sample") {
  const ModelSpec spec{{4, 6, 3}};
  Rng rng(11);
  const ParamVector w = init_params(spec, rng.fork("w"));
  LabeledBatch one = random_batch(rng, 1, 4, 3);
  LabeledBatch four;
  four.features = Matrix(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) four.features.at(r, c) = one.features.at(0, c);
  four.labels.assign(4, one.labels[0]);
  CHECK(loss_value(w, four, spec) == doctest::Approx(loss_value(w, one, spec)).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches finite differences on 100 random instances") {
  const ModelSpec spec{{4, 5, 3}};
  int checked = 0;
  for (int it = 0; it < 100; ++it) {
    Rng rng(1000 + it);
    const ParamVector w = init_params(spec, rng.fork("w"));
    const LabeledBatch batch = random_batch(rng, 3, 4, 3);
    const auto lg = loss_and_grad(w, batch, spec);
    const Vector numeric = numkit::finite_diff_grad(
        [&](const Vector& x) {
          ParamVector probe = w;
          std::copy(x.begin(), x.end(), probe.data().begin());
          return loss_value(probe, batch, spec);
        },
        Vector(w.data().begin(), w.data().end()), 1e-5);
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double diff = std::abs(lg.grad.data()[j] - numeric[j]);
      const double rel = diff / std::max(1e-8, std::abs(numeric[j]));
      CHECK((rel <= 1e-4 || diff <= 1e-7));
    }
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("flatten/unflatten round-trips every block bit-exactly") {
  const ModelSpec spec{{4, 7, 3, 2}};
  Rng rng(77);
  const ParamVector w = init_params(spec, rng);
  ParamVector rebuilt{model_manifest(spec)};
  for (const auto& info : w.manifest()) rebuilt.set_block(info.name, w.block_matrix(info.name));
  CHECK(rebuilt == w);
}

TEST_CASE("sgd_step plain and momentum recursions") {
  const ModelSpec spec{{2, 2, 2}};
  ParamVector w{model_manifest(spec)};
  ParamVector grad{model_manifest(spec)};
  for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] = 0.5 * (1.0 + double(i % 3));

  SUBCASE("momentum 0 is plain sgd") {
    ParamVector w0 = w;
    OptimizerState opt = OptimizerState::for_params(w, 0.0);
    sgd_step(w0, grad, opt, 0.25);
    for (std::size_t i = 0; i < w.size(); ++i)
      CHECK(w0.data()[i] == w.data()[i] - 0.25 * grad.data()[i]);
  }

  SUBCASE("zero grad and zero velocity is a fixed point") {
    ParamVector w0 = w;
    ParamVector zero = ParamVector::zeros_like(grad);
    OptimizerState opt = OptimizerState::for_params(w, 0.9);
    sgd_step(w0, zero, opt, 0.1);
    CHECK(w0 == w);
  }

  SUBCASE("two momentum steps with a constant gradient") {
    // v1 = g, w1 = -0.1 g; v2 = 1.9 g, w2 = -0.29 g
    ParamVector w0 = w;  // zeros
    OptimizerState opt = OptimizerState::for_params(w, 0.9);
    sgd_step(w0, grad, opt, 0.1);
    sgd_step(w0, grad, opt, 0.1);
    for (std::size_t i = 0; i < w.size(); ++i)
      CHECK(w0.data()[i] == doctest::Approx(-0.29 * grad.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("anneal schedule follows the 1/sqrt(2) rule") {
  const AnnealSchedule at10 = AnnealSchedule::after(10);
  CHECK(anneal(0.1, 5, at10) == 0.1);
  CHECK(anneal(0.1, 10, at10) == 0.1);
  CHECK(anneal(0.1, 11, at10) == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(anneal(0.1, 12, at10) == doctest::Approx(0.05).epsilon(1e-12));

  const AnnealSchedule never = AnnealSchedule::never();
  for (int epoch = 1; epoch < 100; ++epoch) CHECK(anneal(0.1, epoch, never) == 0.1);
}

TEST_CASE("loss decreases over 50 plain-SGD steps on a tiny batch") {
  const ModelSpec spec{{4, 8, 3}};
  Rng rng(31);
  ParamVector w = init_params(spec, rng.fork("w"));
  const LabeledBatch batch = random_batch(rng, 4, 4, 3);
  OptimizerState opt = OptimizerState::for_params(w, 0.0);
  const double initial = loss_value(w, batch, spec);
  for (int step = 0; step < 50; ++step) {
    const auto lg = loss_and_grad(w, batch, spec);
    sgd_step(w, lg.grad, opt, 0.1);
  }
  CHECK(loss_value(w, batch, spec) < initial);
}

TEST_CASE("loss_and_grad validates inputs") {
  const ModelSpec spec{{3, 4, 2}};
  ParamVector w{model_manifest(spec)};
  Rng rng(9);
  LabeledBatch bad = random_batch(rng, 2, 3, 2);
  bad.labels[1] = 7;
  CHECK_THROWS_AS(loss_value(w, bad, spec), Error);

  LabeledBatch wrong_dim = random_batch(rng, 2, 4, 2);
  CHECK_THROWS_AS(loss_value(w, wrong_dim, spec), Error);
}
