#include "btdnet/training/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "btdnet/synth/synth.hpp"

namespace btdnet::training {

const GradcheckEntry* GradcheckReport::worst() const {
  if (entries.empty()) return nullptr;
  return &*std::max_element(entries.begin(), entries.end(),
                            [](const GradcheckEntry& a, const GradcheckEntry& b) { return a.rel_error < b.rel_error; });
}

GradcheckReport loss_gradient_check(network::BtdNet<double>& model, const MixBatch& batch,
                                    const objective::FocalParams& params, const GradcheckOptions& options) {
  nn::ParamList<double> tensors;
  for (nn::Parameter<double>* p : model.trainable_parameters()) {
    if (p->name.rfind("head.", 0) != 0 && p->value.size() > 0) tensors.push_back(p);
  }

  GradcheckReport report;
  model.zero_grad();
  report.loss = mix_loss_and_grad(model, batch, std::nullopt, params, false);

  std::mt19937_64 rng(options.seed);
  for (int k = 0; k < options.num_params; ++k) {
    nn::Parameter<double>& p = *tensors[static_cast<size_t>(k) % tensors.size()];
    const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(0, p.value.size() - 1)(rng);
    double& theta = p.value.data()[i];
    const double saved = theta;
    theta = saved + options.step;
    const double up = mix_loss(model, batch, std::nullopt, params);
    theta = saved - options.step;
    const double down = mix_loss(model, batch, std::nullopt, params);
    theta = saved;

    GradcheckEntry e;
    e.name = p.name;
    e.index = i;
    e.analytic = p.grad.data()[i];
    e.numeric = (up - down) / (2.0 * options.step);
    e.rel_error = std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), options.floor});
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  RunConfig config = synthetic_config();
  config.network.lengths.fill(8);
  config.synth.num_scans = 4;
  config.synth.seed = options.seed;
  for (auto& range : config.synth.slice_range) range = {5, 10};

  const data::PreparedDataset dataset = synth::prepared_synthetic(config.synth, config.data);
  std::vector<data::Scan> real;
  for (size_t i = 0; i < dataset.size(); ++i) real.push_back(dataset.materialize(i, config.network.lengths));

  augment::Rng rng(options.seed);
  const MixBatch batch = make_mix_batch(std::move(real), config, rng);
  network::BtdNet<double> model(config.network);
  model.init(rng);
  return loss_gradient_check(model, batch, config.loss, options);
}

}  // namespace btdnet::training
