use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffArray, Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Probe at most this many entries per input (chosen by `seed`).
    pub max_probes: Option<usize>,
    pub seed: u64,
}

impl GradcheckConfig {
    pub fn new(step: f64, tolerance: f64) -> Self {
        GradcheckConfig {
            step,
            tolerance,
            max_probes: None,
            seed: 0,
        }
    }

    pub fn with_max_probes(mut self, probes: usize) -> Self {
        self.max_probes = Some(probes);
        self
    }
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig::new(1e-3, 1e-3)
    }
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probed: usize,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.max_rel_err < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InputReport> {
        self.inputs
            .iter()
            .filter(|r| r.max_rel_err >= self.tolerance)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn eval_sum<T, F>(f: &F, inputs: &[DiffArray<T>]) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.data(out).iter().map(|v| v.f64()).sum())
}

/// Compares the tape's adjoints of `sum(f(inputs))` with central finite
/// differences, entry by entry.
pub fn gradcheck<T, F>(
    f: F,
    inputs: &[(&str, DiffArray<T>)],
    config: &GradcheckConfig,
) -> Result<GradcheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(_, a)| {
            let mut a = a.clone();
            a.set_requires_grad(true);
            tape.leaf(a)
        })
        .collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("gradcheck: output at the base point".into()));
    }
    let total = tape.sum(out);
    tape.backward(total)?;

    let mut base: Vec<DiffArray<T>> = inputs.iter().map(|(_, a)| a.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::with_capacity(inputs.len());
    for (slot, ((name, array), var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic: Vec<f64> = match tape.grad(*var) {
            Some(g) => g.iter().map(|v| v.f64()).collect(),
            None => vec![0.0; array.numel()],
        };
        let indices: Vec<usize> = match config.max_probes {
            Some(k) if k < array.numel() => {
                let mut idx = sample(&mut rng, array.numel(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..array.numel()).collect(),
        };
        let mut report = InputReport {
            name: name.to_string(),
            max_rel_err: 0.0,
            worst_index: indices.first().copied().unwrap_or(0),
            analytic: 0.0,
            numeric: 0.0,
            probed: indices.len(),
        };
        for &k in &indices {
            let x0 = array.data()[k];
            let hi = x0 + T::of(config.step);
            let lo = x0 - T::of(config.step);
            base[slot].data_mut()[k] = hi;
            let f_hi = eval_sum(&f, &base);
            base[slot].data_mut()[k] = lo;
            let f_lo = eval_sum(&f, &base);
            base[slot].data_mut()[k] = x0;
            let (f_hi, f_lo) = (f_hi?, f_lo?);
            if !f_hi.is_finite() || !f_lo.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradcheck: probing {name}[{k}] gave {f_hi} / {f_lo}"
                )));
            }
            let numeric = (f_hi - f_lo) / (hi.f64() - lo.f64());
            let err = relative_error(analytic[k], numeric);
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst_index = k;
                report.analytic = analytic[k];
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(GradcheckReport {
        inputs: reports,
        tolerance: config.tolerance,
    })
}
