#include "btdnet/selftest.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "btdnet/evaluation/evaluate.hpp"
#include "btdnet/synth/synth.hpp"
#include "btdnet/training/config.hpp"

namespace btdnet {

using data::Modality;
using network::Matrix;

namespace {

std::string format(const char* label, double value) {
  std::ostringstream out;
  out << label << ' ' << value;
  return out.str();
}

training::RunConfig tiny_config(uint64_t seed) {
  training::RunConfig config = training::synthetic_config();
  config.network.lengths.fill(8);
  config.synth.num_scans = 6;
  config.synth.seed = seed;
  for (auto& range : config.synth.slice_range) range = {5, 10};
  return config;
}

InvariantResult padding_invariance(network::BtdNet<float>& model, const std::vector<data::Scan>& scans,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<float> pixel(-1.0F, 1.0F);
  network::ForwardOptions opts;
  double worst = 0.0;
  for (const data::Scan& scan : scans) {
    data::Scan noisy = scan;
    for (data::Volume& vol : noisy.volumes) {
      for (int k = vol.true_length; k < vol.padded_length(); ++k) {
        for (float& v : vol.slices[k].plane) v = pixel(rng);
      }
    }
    const data::Scan* a = &scan;
    const data::Scan* b = &noisy;
    const Matrix<float> za = model.forward(std::span<const data::Scan* const>(&a, 1), opts);
    const Matrix<float> zb = model.forward(std::span<const data::Scan* const>(&b, 1), opts);
    worst = std::max(worst, static_cast<double>((za - zb).cwiseAbs().maxCoeff()));
  }
  return {"padding invariance", worst <= 1e-6, format("max |dz|", worst)};
}

InvariantResult masked_gradient(network::BtdNet<float>& model, const std::vector<data::Scan>& scans) {
  std::vector<const data::Scan*> batch;
  for (const data::Scan& s : scans) batch.push_back(&s);
  network::ForwardOptions opts;
  opts.mode = network::Mode::kTrain;
  opts.update_bn_stats = false;
  opts.input_grads = true;
  network::BtdNet<float>::TapePtr tape;
  const Matrix<float> z = model.forward(batch, opts, &tape);
  network::InputGradients<float> grads;
  model.backward(*tape, Matrix<float>::Ones(z.rows(), z.cols()), &grads);
  model.zero_grad();
  long nonzero = 0;
  for (size_t b = 0; b < scans.size(); ++b) {
    for (Modality m : data::kModalities) {
      const int l = scans[b].volume(m).true_length;
      const Matrix<float>& g = grads.rnn[b][data::index_of(m)];
      nonzero += (g.bottomRows(g.rows() - l).array() != 0.0F).count();
      const auto& pixels = grads.pixels[b][data::index_of(m)];
      for (size_t k = static_cast<size_t>(l); k < pixels.size(); ++k) {
        for (float v : pixels[k]) nonzero += v != 0.0F;
      }
    }
  }
  return {"masked gradient is zero", nonzero == 0, format("nonzero entries past l:", static_cast<double>(nonzero))};
}

InvariantResult focal_bce(std::mt19937_64& rng) {
  objective::FocalParams p;
  p.alpha = 0.5;
  p.gamma = 0.0;
  std::normal_distribution<double> logit(0.0, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double s = logit(rng);
    const int y = i % 2;
    const double bce = y == 1 ? std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    worst = std::max(worst, std::abs(objective::focal_term(s, y, p) - 0.5 * bce));
  }
  return {"focal(gamma=0, alpha=0.5) = BCE/2", worst <= 1e-9, format("max error", worst)};
}

InvariantResult total_loss_endpoint(std::mt19937_64& rng) {
  std::normal_distribution<double> logit(0.0, 2.0);
  Matrix<double> v(3, 2), ri(3, 2), rj(3, 2);
  for (Matrix<double>* m : {&v, &ri, &rj}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = logit(rng);
  }
  const std::vector<int> yi = {0, 1, 1};
  const std::vector<int> yj = {1, 0, 1};
  const objective::FocalParams p;
  const auto t = objective::total_loss<double>(v, ri, rj, yi, yj, 1.0, p);
  const double expected = objective::focal_loss<double>(v, yi, p) + objective::focal_loss<double>(ri, yi, p) +
                          objective::focal_loss<double>(rj, yj, p);
  const double err = std::abs(t.total - expected);
  return {"total loss at lambda = 1", err <= 1e-12, format("error", err)};
}

InvariantResult mix_endpoints(const std::vector<data::Scan>& scans) {
  const auto one = augment::mix_scans(scans[0], scans[1], 1.0, 0, 1).mixed;
  const auto zero = augment::mix_scans(scans[0], scans[1], 0.0, 0, 1).mixed;
  bool ok = true;
  for (Modality m : data::kModalities) {
    ok = ok && one.volume(m).slices == scans[0].volume(m).slices && zero.volume(m).slices == scans[1].volume(m).slices;
  }
  return {"mix endpoints reproduce the sources", ok, ok ? "bitwise equal" : "differs"};
}

InvariantResult tta_sums(network::BtdNet<float>& model, const data::Scan& scan) {
  const evaluation::LogitFn constant = [](const data::Scan&) { return evaluation::Logits{0.3, -1.7}; };
  const auto flat = evaluation::tta_predict(constant, scan, 7.0);
  bool ok = flat.p_final[0] == 4 * 0.3 && flat.p_final[1] == 4 * -1.7;
  const evaluation::LogitFn base = evaluation::model_logits(model, std::nullopt);
  const auto r = evaluation::tta_predict(base, scan, 7.0);
  const evaluation::LogitFn scaled = [&base](const data::Scan& s) {
    const auto z = base(s);
    return evaluation::Logits{2.5 * z[0], 2.5 * z[1]};
  };
  ok = ok && evaluation::tta_predict(scaled, scan, 7.0).label == r.label;
  return {"TTA sum and scale invariance", ok, ok ? "exact" : "mismatch"};
}

InvariantResult f1_single_class() {
  const std::vector<int> truth = {0, 1, 0, 1, 1, 0};
  const std::vector<int> predicted(truth.size(), 1);
  const double f1 = evaluation::macro_f1(predicted, truth);
  return {"macro-F1 of a constant predictor", f1 == 1.0 / 3.0, format("value", f1)};
}

}  // namespace

std::vector<InvariantResult> run_selftest(uint64_t seed) {
  const training::RunConfig config = tiny_config(seed);
  const data::PreparedDataset dataset = synth::prepared_synthetic(config.synth, config.data);
  std::vector<data::Scan> scans;
  for (size_t i = 0; i < dataset.size(); ++i) scans.push_back(dataset.materialize(i, config.network.lengths));

  std::mt19937_64 rng(seed);
  network::BtdNet<float> model(config.network);
  model.init(rng);

  std::vector<InvariantResult> out;
  out.push_back(padding_invariance(model, scans, rng));
  out.push_back(masked_gradient(model, scans));
  out.push_back(focal_bce(rng));
  out.push_back(total_loss_endpoint(rng));
  out.push_back(mix_endpoints(scans));
  out.push_back(tta_sums(model, scans[0]));
  out.push_back(f1_single_class());
  return out;
}

}  // namespace btdnet
