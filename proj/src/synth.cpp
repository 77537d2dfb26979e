#include "hnrfs/synth.hpp"

#include <algorithm>
#include <cmath>

#include "hnrfs/errors.hpp"
#include "hnrfs/random.hpp"

namespace hnrfs {

void SynthSpec::validate() const {
  if (n < 2) throw InvalidArgument("synth: n must be >= 2");
  if (!(baseline_rate > 0.0)) throw InvalidArgument("synth: baseline_rate must be > 0");
  if (!(censoring_rate >= 0.0 && censoring_rate < 1.0)) {
    throw InvalidArgument("synth: censoring_rate must be in [0, 1)");
  }
  if (!betas.allFinite()) throw InvalidArgument("synth: betas must be finite");
}

namespace {

constexpr std::uint64_t kCovariateStream = 0x1000;
constexpr std::uint64_t kCensorStream = 0x2000;

std::size_t censored_count(const std::vector<double>& event_times,
                           const std::vector<double>& censor_draws, double rate) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < event_times.size(); ++i) {
    if (censor_draws[i] / rate < event_times[i]) ++c;
  }
  return c;
}

// Censoring rate whose realized censored fraction is closest to the target.
// The fraction is monotone in the rate, so bisect on log(rate).
double calibrate_censoring(const std::vector<double>& event_times,
                           const std::vector<double>& censor_draws, double target) {
  const auto want = static_cast<double>(event_times.size()) * target;
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (static_cast<double>(censored_count(event_times, censor_draws, std::exp(mid))) < want) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double a = std::exp(lo), b = std::exp(hi);
  const double da = std::abs(static_cast<double>(censored_count(event_times, censor_draws, a)) - want);
  const double db = std::abs(static_cast<double>(censored_count(event_times, censor_draws, b)) - want);
  return da <= db ? a : b;
}

}  // namespace

SynthCohort generate_survival(const SynthSpec& spec, std::size_t n_noise_features) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n);
  const Eigen::Index p_signal = spec.betas.size();
  const Eigen::Index p = p_signal + static_cast<Eigen::Index>(n_noise_features);

  SynthCohort out;
  out.table.values.resize(n, p);
  for (Eigen::Index j = 0; j < p_signal; ++j) out.table.feature_names.push_back("signal_" + std::to_string(j));
  for (std::size_t j = 0; j < n_noise_features; ++j) out.table.feature_names.push_back("noise_" + std::to_string(j));

  std::vector<double> event_times(spec.n), censor_draws(spec.n);
  out.linear_predictor.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.table.patient_ids.push_back("P" + std::to_string(1000000 + i).substr(1));
    Rng rng(derive_seed(spec.seed, kCovariateStream + static_cast<std::uint64_t>(i) * 0x10000));
    for (Eigen::Index j = 0; j < p; ++j) {
      const bool binary = spec.covariates == CovariateKind::binary && j < p_signal;
      out.table.values(i, j) = binary ? double(rng.below(2)) : rng.normal();
    }
    const double eta = out.table.values.row(i).head(p_signal).dot(spec.betas);
    out.linear_predictor(i) = eta;
    event_times[static_cast<std::size_t>(i)] = rng.exponential(spec.baseline_rate * std::exp(eta));
    Rng censor_rng(derive_seed(spec.seed, kCensorStream + static_cast<std::uint64_t>(i) * 0x10000));
    // Unit-rate exponential; scaled by the calibrated rate below.
    censor_draws[static_cast<std::size_t>(i)] = -std::log(censor_rng.uniform());
  }

  const double rate =
      spec.censoring_rate > 0.0 ? calibrate_censoring(event_times, censor_draws, spec.censoring_rate) : 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    double t = event_times[i];
    bool event = true;
    if (rate > 0.0 && censor_draws[i] / rate < t) {
      t = censor_draws[i] / rate;
      event = false;
    }
    out.records.push_back(SurvivalRecord::make(std::max(t, 1e-9), event));
  }
  return out;
}

MultiModalCohort generate_multimodal(std::size_t n, const Eigen::VectorXd& clinical_betas,
                                     const Eigen::VectorXd& ct_betas,
                                     const Eigen::VectorXd& pet_betas, std::size_t noise_per_modality,
                                     double censoring_rate, std::uint64_t seed,
                                     std::size_t missing_gtvp) {
  if (missing_gtvp >= n) throw InvalidArgument("synth: missing_gtvp must be < n");
  const Eigen::Index pc = clinical_betas.size(), pt = ct_betas.size(), pp = pet_betas.size();
  const auto noise = static_cast<Eigen::Index>(noise_per_modality);
  SynthSpec spec;
  spec.n = n;
  spec.betas.resize(pc + pt + pp);
  spec.betas << clinical_betas, ct_betas, pet_betas;
  spec.censoring_rate = censoring_rate;
  spec.seed = seed;
  const SynthCohort all = generate_survival(spec, 3 * noise_per_modality);

  MultiModalCohort out;
  out.records = all.records;
  auto build = [&](Modality m, Eigen::Index signal_start, Eigen::Index n_signal, Eigen::Index noise_start,
                   const std::string& prefix, std::vector<std::string>& planted, std::size_t skip) {
    FeatureTable t;
    t.modality = m;
    const auto rows = static_cast<Eigen::Index>(n - skip);
    t.values.resize(rows, n_signal + noise);
    for (Eigen::Index j = 0; j < n_signal; ++j) {
      t.feature_names.push_back(prefix + "signal_" + std::to_string(j));
      planted.push_back(t.feature_names.back());
    }
    for (Eigen::Index j = 0; j < noise; ++j) t.feature_names.push_back(prefix + "noise_" + std::to_string(j));
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index src = i + static_cast<Eigen::Index>(skip);
      t.patient_ids.push_back(all.table.patient_ids[static_cast<std::size_t>(src)]);
      t.values.row(i).head(n_signal) = all.table.values.row(src).segment(signal_start, n_signal);
      t.values.row(i).tail(noise) = all.table.values.row(src).segment(noise_start, noise);
    }
    return t;
  };
  const Eigen::Index noise0 = pc + pt + pp;
  out.clinical = build(Modality::clinical, 0, pc, noise0, "clin_", out.planted_clinical, 0);
  out.ct = build(Modality::ct, pc, pt, noise0 + noise, "ct_", out.planted_ct, missing_gtvp);
  out.pet = build(Modality::pet, pc + pt, pp, noise0 + 2 * noise, "pet_", out.planted_pet, missing_gtvp);
  return out;
}

Phantom generate_volume_phantom(const PhantomSpec& spec) {
  const Point3 lo = spec.origin;
  const Point3 hi = spec.origin + spec.spacing.cwiseProduct(
                                      Point3(double(spec.dims.nx - 1), double(spec.dims.ny - 1),
                                             double(spec.dims.nz - 1)));
  auto check = [&](const Sphere& s, const char* what) {
    if (s.radius_mm < spec.spacing.maxCoeff()) {
      throw InvalidArgument(std::string("phantom: ") + what + " radius is below one voxel");
    }
    for (int a = 0; a < 3; ++a) {
      if (s.center[a] - s.radius_mm < lo[a] || s.center[a] + s.radius_mm > hi[a]) {
        throw InvalidArgument(std::string("phantom: ") + what + " sphere leaves the volume");
      }
    }
  };
  if (spec.gtvp) check(*spec.gtvp, "GTVp");
  for (const auto& s : spec.gtvn) check(s, "GTVn");

  LabelVolume labels(spec.dims, spec.spacing, spec.origin, kBackground);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const Point3 x = labels.position(v);
    if (spec.gtvp && (x - spec.gtvp->center).norm() <= spec.gtvp->radius_mm) {
      labels.set(v, kGtvp);
      continue;
    }
    for (const auto& s : spec.gtvn) {
      if ((x - s.center).norm() <= s.radius_mm) {
        labels.set(v, kGtvn);
        break;
      }
    }
  }

  const auto& in = spec.intensities;
  std::vector<double> ct(labels.size()), pet(labels.size());
  Rng rng(derive_seed(spec.seed, 0x5EED));
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const Label l = labels[v];
    ct[v] = l == kGtvp ? in.ct_gtvp : l == kGtvn ? in.ct_gtvn : in.ct_background;
    pet[v] = l == kGtvp ? in.pet_gtvp : l == kGtvn ? in.pet_gtvn : in.pet_background;
    if (in.noise_sd > 0.0) {
      ct[v] += in.noise_sd * rng.normal();
      pet[v] += in.noise_sd * rng.normal();
    }
  }
  return {labels, ScalarVolume(spec.dims, spec.spacing, spec.origin, std::move(ct)),
          ScalarVolume(spec.dims, spec.spacing, spec.origin, std::move(pet))};
}

}  // namespace hnrfs
