#include <doctest.h>

#include "hetdiar/embedder.hpp"
#include "hetdiar/error.hpp"
#include "hetdiar/synthcorpus.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

using namespace hetdiar;

namespace {

EmbedderConfig tiny_config() {
  EmbedderConfig c;
  c.stage_channels = {2, 3, 3, 4};
  c.stage_blocks = {0, 1, 1, 1};
  c.stage_downsample = {false, false, true, true};
  c.embed_dim = 5;
  c.n_classes = 3;
  c.input_dim = 8;
  return c;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

Eigen::MatrixXd random_labels(Eigen::Index b, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd l(b, c);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) l(i, j) = rng.uniform(0.0, 1.0);
    l.row(i) /= l.row(i).sum();
  }
  return l;
}

struct TrainedFixture {
  SyntheticCorpus corpus;
  TrainResult result;
};

// One desk-scale training run shared by the slower checks.
const TrainedFixture& trained() {
  static const TrainedFixture f = [] {
    TrainedFixture t;
    CorpusConfig cc;
    cc.train_speakers = 20;
    cc.eval_speakers = 6;
    cc.sessions = 1;
    t.corpus = generate_corpus(cc, 5);
    AssemblyConfig a;
    a.dim = cc.dim;
    EmbedderConfig e;
    TrainSchedule s;
    s.epochs = 5;
    t.result = train_embedder(t.corpus.train, a, e, s, 5);
    return t;
  }();
  return f;
}

}  // namespace

TEST_SUITE("embedder") {
  TEST_CASE("soft_cross_entropy examples") {
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(1, 3);
    Eigen::MatrixXd label(1, 3);
    label << 3.0 / 8, 5.0 / 8, 0;
    CHECK(soft_cross_entropy(logits, label) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // One-hot: ordinary cross entropy.
    Eigen::MatrixXd z = random_matrix(4, 5, 1);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(4, 5);
    double expected = 0;
    for (int b = 0; b < 4; ++b) {
      onehot(b, b) = 1;
      double lse = std::log(z.row(b).array().exp().sum());
      expected += lse - z(b, b);
    }
    CHECK(soft_cross_entropy(z, onehot) == doctest::Approx(expected / 4).epsilon(1e-12));

    // Saturation.
    double prev = 1e9;
    for (double alpha : {1.0, 10.0, 100.0, 1000.0}) {
      const double l = soft_cross_entropy(Eigen::MatrixXd(alpha * onehot), onehot);
      CHECK(l <= prev);
      CHECK(l >= 0.0);
      prev = l;
    }
    CHECK(prev < 1e-12);

    Eigen::MatrixXd bad(1, 3);
    bad << 0.5, 0.2, 0.2;
    CHECK_THROWS_AS(soft_cross_entropy(logits, bad), DataError);
  }

  TEST_CASE("soft_cross_entropy: shift invariance and entropy bound") {
    for (int k = 0; k < 50; ++k) {
      Eigen::MatrixXd z = random_matrix(3, 6, 100 + k);
      Eigen::MatrixXd y = random_labels(3, 6, 200 + k);
      Eigen::MatrixXd shifted = z;
      shifted.row(1).array() += 17.5;
      shifted.row(2).array() -= 3.25;
      CHECK(std::abs(soft_cross_entropy(z, y) - soft_cross_entropy(shifted, y)) < 1e-9);
      double entropy = 0;
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 6; ++c) entropy -= y(b, c) * std::log(y(b, c));
      CHECK(soft_cross_entropy(z, y) >= entropy / 3 - 1e-12);
      // Logits equal to log labels attain the bound.
      Eigen::MatrixXd at = y.array().log().matrix();
      CHECK(std::abs(soft_cross_entropy(at, y) - entropy / 3) < 1e-6);
    }
  }

  TEST_CASE("forward: shapes, batch independence and zero input") {
    EmbedderConfig c;
    c.n_classes = 7;
    EmbedderModel m = EmbedderModel::initialize(c, 1);
    Eigen::MatrixXd x = random_matrix(4 * 64, 16, 2);
    auto out = m.forward(x, 64);
    CHECK(out.embeddings.rows() == 4);
    CHECK(out.embeddings.cols() == c.embed_dim);
    CHECK(out.logits.rows() == 4);
    CHECK(out.logits.cols() == 7);

    Eigen::MatrixXd dup(2 * 64, 16);
    dup << x.topRows(64), x.topRows(64);
    auto d = m.forward(dup, 64);
    CHECK(d.embeddings.row(0) == d.embeddings.row(1));
    CHECK((d.embeddings.row(0) - out.embeddings.row(0)).cwiseAbs().maxCoeff() < 1e-12);

    auto zero = m.forward(Eigen::MatrixXd::Zero(2 * 64, 16), 64);
    CHECK(zero.logits.cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS(m.forward(random_matrix(64, 15, 3), 64));
  }

  TEST_CASE("shape law follows floor halving") {
    EmbedderConfig c = EmbedderConfig::resnet34(64, 10);
    CHECK(c.stage_channels == std::vector<int>{16, 16, 32, 64, 128, 256});
    CHECK(c.embed_dim == 256);
    for (int t : {32, 33, 64, 150, 301}) {
      for (int d : {32, 40, 64}) {
        auto shapes = c.stage_shapes(t, d);
        REQUIRE(shapes.size() == c.stage_channels.size());
        int tt = t, dd = d;
        for (std::size_t s = 0; s < shapes.size(); ++s) {
          if (c.stage_downsample[s]) {
            tt /= 2;
            dd /= 2;
          }
          CHECK(shapes[s].first == tt);
          CHECK(shapes[s].second == dd);
        }
      }
    }
    EmbedderConfig desk;
    CHECK(desk.min_frames() == 4);
    EmbedderModel m = EmbedderModel::initialize(desk, 4);
    for (int t : {4, 5, 7, 150}) {
      FeatureMatrix f;
      f.frames = random_matrix(t, 16, t);
      CHECK(extract_embedding(m, f).size() == 64);
    }
    FeatureMatrix shortf;
    shortf.frames = random_matrix(3, 16, 1);
    CHECK_THROWS_AS(extract_embedding(m, shortf), DataError);
  }

  TEST_CASE("default embedding length is 256") {
    EmbedderConfig c = EmbedderConfig::resnet34(16, 4);
    EmbedderModel m = EmbedderModel::initialize(c, 1);
    FeatureMatrix f;
    f.frames = random_matrix(32, 16, 5);
    CHECK(extract_embedding(m, f).size() == 256);
  }

  TEST_CASE("analytic gradient matches central finite differences") {
    EmbedderConfig c = tiny_config();
    EmbedderModel m = EmbedderModel::initialize(c, 9);
    // Nonzero biases so every bias gradient is exercised away from symmetric points.
    Rng brng(4);
    for (auto& p : m.params())
      if (p.rank == 1)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = 0.1 * brng.normal();
    const int frames = 9;
    Eigen::MatrixXd x = random_matrix(3 * frames, 8, 10);
    Eigen::MatrixXd y = random_labels(3, 3, 11);
    std::vector<Eigen::MatrixXd> grads;
    m.loss_and_gradient(x, frames, y, grads);
    REQUIRE(grads.size() == m.params().size());

    auto loss_at = [&](EmbedderModel& mm) { return soft_cross_entropy(mm.forward(x, frames).logits, y); };
    Rng rng(12);
    int checked = 0;
    std::set<std::string> kinds;
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      auto& p = m.params()[i];
      for (int k = 0; k < 3; ++k) {
        const Eigen::Index idx = rng.uniform_int(0, p.value.size() - 1);
        const double h = 1e-4, orig = p.value(idx);
        p.value(idx) = orig + h;
        const double up = loss_at(m);
        p.value(idx) = orig - h;
        const double down = loss_at(m);
        p.value(idx) = orig;
        const double numeric = (up - down) / (2 * h);
        const double analytic = grads[i](idx);
        CHECK_MESSAGE(std::abs(numeric - analytic) <= 1e-4 * std::max(std::abs(numeric), std::abs(analytic)) + 1e-9,
                      p.name << "[" << idx << "] analytic " << analytic << " numeric " << numeric);
        ++checked;
      }
      kinds.insert(p.name.substr(p.name.find_last_of('.') + 1));
    }
    CHECK(checked >= 20);
    CHECK(kinds.count("weight"));
    CHECK(kinds.count("bias"));
  }

  TEST_CASE("train_step: zero learning rate leaves parameters unchanged") {
    EmbedderConfig c = tiny_config();
    TrainState st(EmbedderModel::initialize(c, 1), 0.0, 0.9);
    AssembledBatch b;
    b.batch_size = 2;
    b.frames = 8;
    b.dim = 8;
    b.tensor = random_matrix(16, 8, 2);
    b.labels = random_labels(2, 3, 3);
    const auto before = st.model.params();
    const double loss = train_step(st, b);
    CHECK(std::isfinite(loss));
    CHECK(st.step == 1);
    REQUIRE(st.loss_history.size() == 1);
    CHECK(st.loss_history[0] == loss);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(st.model.params()[i].value == before[i].value);
  }

  TEST_CASE("train_step: non-finite input is reported") {
    EmbedderConfig c = tiny_config();
    TrainState st(EmbedderModel::initialize(c, 1), 0.01, 0.9);
    AssembledBatch b;
    b.batch_size = 1;
    b.frames = 8;
    b.dim = 8;
    b.tensor = random_matrix(8, 8, 2);
    b.tensor(3, 3) = std::numeric_limits<double>::quiet_NaN();
    b.labels = random_labels(1, 3, 3);
    CHECK_THROWS_AS(train_step(st, b), NumericError);
  }

  TEST_CASE("200 steps on a fixed 4-speaker batch set reduce the loss") {
    EmbedderConfig c = tiny_config();
    c.n_classes = 4;
    TrainState st(EmbedderModel::initialize(c, 3), 0.01, 0.9);
    st.max_grad_norm = 5.0;
    std::vector<AssembledBatch> set;
    for (int k = 0; k < 4; ++k) {
      AssembledBatch b;
      b.batch_size = 4;
      b.frames = 8;
      b.dim = 8;
      b.tensor.resize(32, 8);
      b.labels = Eigen::MatrixXd::Identity(4, 4);
      for (int s = 0; s < 4; ++s) {
        Eigen::MatrixXd noise = 0.3 * random_matrix(8, 8, 50 + 4 * k + s);
        Eigen::MatrixXd centre = Eigen::MatrixXd::Constant(8, 8, 0.0);
        centre.col(2 * s).setConstant(1.5);
        b.tensor.middleRows(8 * s, 8) = centre + noise;
      }
      set.push_back(b);
    }
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
      const double l = train_step(st, set[step % 4]);
      if (step < 4) first += l;
      if (step >= 196) last += l;
    }
    CHECK(last < first);
  }

  TEST_CASE("average pooling: tiled segment gives a nearly identical embedding") {
    EmbedderConfig c;
    c.n_classes = 5;
    EmbedderModel m = EmbedderModel::initialize(c, 3);
    FeatureMatrix f;
    f.frames = random_matrix(4000, 16, 7);
    FeatureMatrix tiled;
    tiled.frames.resize(8000, 16);
    tiled.frames << f.frames, f.frames;
    const Eigen::VectorXd a = extract_embedding(m, f);
    CHECK((a - extract_embedding(m, f)).norm() == 0.0);
    CHECK((a - extract_embedding(m, tiled)).norm() / a.norm() < 1e-3);
  }

  TEST_CASE("training on the synthetic corpus beats chance and separates speakers") {
    const auto& t = trained();
    const int classes = t.corpus.train.num_classes();
    CHECK(t.result.report.epoch_mean_loss.size() == 5);
    CHECK(t.result.report.epoch_mean_loss.back() < std::log(double(classes)));
    CHECK(t.result.report.augmentation.rate() == 0.0);

    // Held-out speakers: mean cosine within speaker exceeds across speakers.
    std::vector<Eigen::VectorXd> emb;
    std::vector<int> who;
    Rng rng(3);
    for (std::size_t s = 0; s < t.corpus.eval_speakers.size(); ++s)
      for (int u = 0; u < 4; ++u) {
        emb.push_back(extract_embedding(t.result.model, synth_utterance(t.corpus.eval_speakers[s], 1.5, rng, 0.01,
                                                                         t.corpus.content)));
        who.push_back(int(s));
      }
    double intra = 0, inter = 0;
    int ni = 0, nx = 0;
    for (std::size_t i = 0; i < emb.size(); ++i)
      for (std::size_t j = i + 1; j < emb.size(); ++j) {
        const double cos = emb[i].dot(emb[j]) / (emb[i].norm() * emb[j].norm());
        if (who[i] == who[j]) {
          intra += cos;
          ++ni;
        } else {
          inter += cos;
          ++nx;
        }
      }
    CHECK(intra / ni > inter / nx);
  }

  TEST_CASE("training is deterministic for a seed") {
    CorpusConfig cc;
    cc.train_speakers = 4;
    cc.eval_speakers = 2;
    cc.max_session_speakers = 2;
    cc.utterances_per_speaker = 2;
    cc.sessions = 1;
    SyntheticCorpus corpus = generate_corpus(cc, 2);
    AssemblyConfig a;
    a.batch_size = 4;
    a.frames = 32;
    a.crop_min = 16;
    a.crop_max = 48;
    EmbedderConfig e = tiny_config();
    TrainSchedule s;
    s.epochs = 2;
    s.batches_per_epoch = 5;
    TrainResult r1 = train_embedder(corpus.train, a, e, s, 8);
    TrainResult r2 = train_embedder(corpus.train, a, e, s, 8);
    TrainResult r3 = train_embedder(corpus.train, a, e, s, 9);
    bool differs = false;
    for (std::size_t i = 0; i < r1.model.params().size(); ++i) {
      CHECK(r1.model.params()[i].value == r2.model.params()[i].value);
      differs = differs || r1.model.params()[i].value != r3.model.params()[i].value;
    }
    CHECK(differs);
    CHECK(r1.report.loss_history == r2.report.loss_history);
    CHECK(r1.report.augmentation.rate() > 0.0);
  }

  TEST_CASE("HDEM checkpoint round trip") {
    EmbedderConfig c = tiny_config();
    EmbedderModel m = EmbedderModel::initialize(c, 6);
    const auto p = std::filesystem::temp_directory_path() / "hetdiar_test_model.hdem";
    save_embedder(p, m);
    EmbedderModel back = load_embedder(p);
    CHECK(back.config().embed_dim == 5);
    REQUIRE(back.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      CHECK(back.params()[i].name == m.params()[i].name);
      CHECK((back.params()[i].value - m.params()[i].value).cwiseAbs().maxCoeff() < 1e-6);
    }
    std::vector<std::string> names;
    for (const auto& p2 : m.params()) names.push_back(p2.name);
    CHECK(names.front() == "conv.weight");
    CHECK(names.back() == "linear2.bias");
  }
}
