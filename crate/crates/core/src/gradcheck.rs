//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_synthetic, SynthConfig, TopologyMode};
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore, PreparedTrace, TrainConfig};
use crate::tape::Tape;
use crate::train::trace_gradients;
use crate::trace::LabeledTrace;

/// Gradients smaller than this are compared on absolute error. Central
/// differences at ε = 1e-5 on an O(1) loss carry roundoff near 1e-11, which
/// would swamp a purely relative comparison of tiny gradients.
pub const REL_ERR_FLOOR: f64 = 1e-6;
pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates checked per tensor (all when the tensor is smaller).
    pub samples: usize,
    pub seed: u64,
    /// Negative control: add 1 to the analytic gradient of this tensor.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub coords: usize,
    /// Coordinates skipped because ±ε moved a LeakyReLU input across zero.
    pub kinks: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Whether any analytic gradient entry is nonzero.
    pub nonzero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    /// Groups at or above `tolerance`.
    pub fn failures(&self, tolerance: f64) -> Vec<&GroupCheck> {
        self.groups.iter().filter(|g| !(g.max_rel_err < tolerance)).collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Loss at one parameter setting plus the sign pattern of every LeakyReLU
/// input, used to reject differences taken across a kink.
pub type Probe = (f64, Vec<bool>);

/// Compare `analytic` against central differences of `loss` at sampled
/// coordinates of every tensor in `params_of(state)`, which is restored on return.
pub fn finite_difference_check<S>(
    state: &mut S,
    params_of: fn(&mut S) -> &mut ParamStore,
    analytic: &ParamStore,
    mut loss: impl FnMut(&S) -> Result<Probe>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
        return Err(Error::InvalidEpsilon(opts.epsilon));
    }
    let eps = opts.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names: Vec<String> = params_of(state).keys().cloned().collect();
    let mut groups = Vec::with_capacity(names.len());
    for name in names {
        let len = params_of(state)[&name].len();
        let grad = analytic
            .get(&name)
            .map(|g| g.iter().copied().collect::<Vec<f64>>())
            .unwrap_or_else(|| vec![0.0; len]);
        let mut check = GroupCheck {
            name: name.clone(),
            coords: 0,
            kinks: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            nonzero: grad.iter().any(|&g| g != 0.0),
        };
        for c in candidate_coords(&grad, opts.samples, &mut rng) {
            if check.coords >= opts.samples {
                break;
            }
            let original = flat(params_of(state), &name, c);
            set_flat(params_of(state), &name, c, original + eps);
            let plus = loss(state);
            set_flat(params_of(state), &name, c, original - eps);
            let minus = loss(state);
            set_flat(params_of(state), &name, c, original);
            let ((lp, kp), (lm, km)) = (plus?, minus?);
            if kp != km {
                check.kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let mut a = grad[c];
            if opts.corrupt.as_deref() == Some(name.as_str()) {
                a += 1.0;
            }
            check.coords += 1;
            check.max_rel_err = check.max_rel_err.max(relative_error(a, numeric));
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
        }
        groups.push(check);
    }
    Ok(GradCheckReport { epsilon: eps, groups })
}

/// Every coordinate when the tensor is small; otherwise up to half the budget
/// from coordinates with a nonzero analytic gradient, then a random order of
/// the rest, so kinked coordinates can be replaced.
fn candidate_coords(grad: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if grad.len() <= samples {
        return (0..grad.len()).collect();
    }
    let mut active: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    active.shuffle(rng);
    active.truncate(samples / 2);
    let mut seen: std::collections::HashSet<usize> = active.iter().copied().collect();
    let mut order = active;
    for i in sample(rng, grad.len(), grad.len()).into_iter() {
        if seen.insert(i) {
            order.push(i);
        }
    }
    order
}

fn flat(params: &ParamStore, name: &str, i: usize) -> f64 {
    let t = &params[name];
    t[[i / t.ncols(), i % t.ncols()]]
}

fn set_flat(params: &mut ParamStore, name: &str, i: usize, v: f64) {
    let t = params.get_mut(name).expect("known tensor");
    let c = t.ncols();
    t[[i / c, i % c]] = v;
}

fn trace_loss(model: &Model, prep: &PreparedTrace) -> Result<Probe> {
    let target = prep
        .target
        .ok_or_else(|| Error::MissingLabel(prep.graph.trace_id.clone()))?;
    let mut tape = Tape::new();
    let fwd = model.forward(prep, &mut tape)?;
    let loss = tape.cross_entropy(fwd.logits, target);
    Ok((tape.scalar(loss), tape.kink_pattern()))
}

/// Check every parameter tensor of `model` on one labeled trace.
pub fn gradient_check(model: &Model, prep: &PreparedTrace, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
        return Err(Error::InvalidEpsilon(opts.epsilon));
    }
    let (_, analytic) = trace_gradients(model, prep, 1.0)?;
    let mut work = model.clone();
    finite_difference_check(&mut work, |m| &mut m.params, &analytic, |m| trace_loss(m, prep), opts)
}

/// A faulty trace with `instances` instances and the model sized for it.
pub fn random_check_case(config: TrainConfig, instances: usize, seed: u64) -> Result<(Model, PreparedTrace)> {
    let synth = SynthConfig {
        num_traces: 1,
        instances_range: (instances, instances),
        fault_rate: 1.0,
        window_len: 16,
        topology_mode: TopologyMode::Dynamic,
        seed,
        ..SynthConfig::default()
    };
    let trace: LabeledTrace = generate_synthetic(&synth)?.remove(0);
    let model = Model::new(config, synth.metric_names.clone())?;
    let prep = model.prepare(&trace.bundle, trace.label.usable_root_cause())?;
    Ok((model, prep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Mat;

    #[test]
    fn quadratic_toy_is_exact() {
        let mut params = ParamStore::from([("w".to_string(), Mat::from_shape_fn((3, 2), |(i, j)| i as f64 - j as f64))]);
        let target = Mat::from_elem((3, 2), 0.5);
        let analytic = ParamStore::from([("w".to_string(), (&params["w"] - &target) * 2.0)]);
        let report = finite_difference_check(
            &mut params,
            |p| p,
            &analytic,
            |p| Ok(((&p["w"] - &target).mapv(|v| v * v).sum(), Vec::new())),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.groups[0].coords, 6);
        assert!(report.max_rel_err() < 1e-8);
    }

    #[test]
    fn rejects_bad_epsilon() {
        for eps in [0.0, -1e-5, f64::NAN] {
            let opts = GradCheckOptions { epsilon: eps, ..GradCheckOptions::default() };
            let r = finite_difference_check(&mut ParamStore::new(), |p| p, &ParamStore::new(), |_| Ok((0.0, Vec::new())), &opts);
            assert!(matches!(r, Err(Error::InvalidEpsilon(_))));
        }
    }

    #[test]
    fn small_model_passes_and_corruption_is_caught() {
        let cfg = TrainConfig {
            dim: 8,
            heads: 2,
            buckets: 64,
            ..TrainConfig::default()
        };
        let (model, prep) = random_check_case(cfg, 5, 3).unwrap();
        let report = gradient_check(&model, &prep, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.groups.len(), model.params.len());
        assert!(report.max_rel_err() < 1e-3, "{:?}", report.failures(1e-3));
        for g in &report.groups {
            assert!(g.coords > 0);
            assert_eq!(g.nonzero, !g.name.contains(crate::model::UNKNOWN_METRIC), "{}", g.name);
        }

        let opts = GradCheckOptions {
            corrupt: Some("head".into()),
            ..GradCheckOptions::default()
        };
        let bad = gradient_check(&model, &prep, &opts).unwrap();
        let failing: Vec<_> = bad.failures(1e-3).iter().map(|g| g.name.clone()).collect();
        assert_eq!(failing, vec!["head".to_string()]);
    }
}
