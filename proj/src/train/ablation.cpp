#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "aniformer/errors.hpp"
#include "aniformer/train.hpp"

namespace aniformer {

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const TrainingConfig& base,
                                      const AblationOptions& options) {
  if (options.seeds.empty()) throw ContractError("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (Variant v : options.variants) {
    AblationRow row;
    row.variant = v;
    for (std::uint64_t seed : options.seeds) {
      TrainingConfig c = variant_config(base, v, manifest.synth.vertex_count());
      c.seed = seed;
      TrainOptions t;
      t.final_eval = false;
      if (!options.out_dir.empty()) t.out_dir = options.out_dir / to_string(v) / ("seed_" + std::to_string(seed));
      const TrainResult trained = train(manifest, c, t);
      const EvalReport report = evaluate(trained.model, manifest);
      if (options.on_run) options.on_run(v, seed, report);
      row.seeds.push_back(seed);
      row.seen_pmd.push_back(report.seen_pmd);
      row.unseen_pmd.push_back(report.unseen_pmd);
    }
    row.median_seen = median(row.seen_pmd);
    row.median_unseen = median(row.unseen_pmd);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant,label,seeds,median_seen_pmd,median_unseen_pmd,seen_pmd_per_seed,unseen_pmd_per_seed\n";
  auto join = [](const auto& xs, auto f) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ";" : "") + f(xs[i]);
    return s;
  };
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << variant_label(r.variant) << ','
        << join(r.seeds, [](std::uint64_t s) { return std::to_string(s); }) << ',' << fmt(r.median_seen) << ','
        << fmt(r.median_unseen) << ',' << join(r.seen_pmd, fmt) << ',' << join(r.unseen_pmd, fmt) << '\n';
  }
  return out.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::vector<std::string>> cells{{"Variant", "Seen PMD (x1e-4)", "Unseen PMD (x1e-4)", "Seeds"}};
  auto scaled = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v * 1e4);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    cells.push_back({variant_label(r.variant), scaled(r.median_seen), scaled(r.median_unseen),
                     std::to_string(r.seeds.size())});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& s = cells[r][c];
      // Text left-aligned, numbers right-aligned.
      if (c == 0) out << s << std::string(width[c] - s.size(), ' ');
      else out << "  " << std::string(width[c] - s.size(), ' ') << s;
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = width[0];
      for (std::size_t c = 1; c < width.size(); ++c) total += 2 + width[c];
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

ToyGradcheck toy_objective_gradcheck() {
  SynthConfig sc;
  sc.bone_count = 2;
  sc.rings_per_bone = 1;
  sc.ring_resolution = 11;
  const SamplePair pair = make_pair(3, 4, 5, 6, sc, 3);

  ModelConfig mc;
  mc.extractor_widths = {8, 8, 8};
  mc.encoder_widths = {8, 8, 4, 4};
  // Seed 8 keeps every ReLU and |.| argument outside the h = 1e-5 stencil.
  AniFormer<double> model(mc, 8);
  for (std::size_t e = 0; e < mc.encoder_widths.size(); ++e) {
    // Nonzero gamma so the attention parameters carry gradient.
    Tensor<double>(model.parameter("encoder." + std::to_string(e) + ".gamma")).mutable_data()[0] =
        0.3 + 0.1 * static_cast<double>(e);
  }
  const Tensor<double> d = sequence_tensor<double>(pair.driving);
  const Tensor<double> g = sequence_tensor<double>(pair.ground_truth);
  const Tensor<double> n = mesh_tensor<double>(pair.target);
  const Neighborhood nbr = build_neighborhood(pair.target);

  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.value);
  GradcheckOptions options;
  options.step = 1e-5;
  options.tolerance = 1e-4;
  options.floor = 1e-6;
  ToyGradcheck out;
  out.report = gradcheck(
      [&](const std::vector<Tensor<double>>&) { return full_objective(model.forward(d, n), g, d, n, nbr).total; },
      inputs, options);
  for (std::size_t i = 0; i < out.report.inputs.size(); ++i) out.report.inputs[i].label = model.parameters()[i].name;
  out.parameter_count = model.parameter_count();
  out.vertex_count = pair.target.vertex_count();
  return out;
}

}  // namespace aniformer
