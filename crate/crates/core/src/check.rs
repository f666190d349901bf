//! Finite-difference verification of every differentiable operation and of
//! the full training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{icosphere, MeshTopology, PointCloud, SpatialIndex};
use crate::model::{ModelConfig, Network};
use crate::ndiff::{gradcheck, BnMode, DiffArray, GradcheckConfig, GradcheckReport, Real, Tape, Var};
use crate::objective::{chamfer_term, laplacian_term, normal_term, overall_loss, LossInputs, LossWeights};

/// Operation checks in f32.
pub const OP_STEP: f64 = 1e-3;
pub const OP_TOL: f64 = 1e-3;
/// Chains through batch norm amplify f32 rounding.
pub const BN_CHAIN_TOL: f64 = 1e-2;
/// Loss terms evaluate in f64 internally and are probed on an f64 tape.
pub const LOSS_STEP: f64 = 1e-6;
/// Whole-network checks in f64.
pub const E2E_STEP: f64 = 1e-6;
pub const E2E_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScale {
    /// Levels 0/2, 64 input points.
    Tiny,
    /// Levels 1/3, 128 input points, wider arrays.
    Small,
}

impl std::str::FromStr for CheckScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(CheckScale::Tiny),
            "small" => Ok(CheckScale::Small),
            other => Err(Error::Parameter(format!("unknown gradcheck scale {other:?}"))),
        }
    }
}

impl CheckScale {
    pub fn model(self) -> ModelConfig {
        match self {
            CheckScale::Tiny => ModelConfig::tiny(),
            CheckScale::Small => ModelConfig {
                coarse_level: 1,
                fine_level: 3,
                input_points: 128,
                ..ModelConfig::tiny()
            },
        }
    }

    fn points(self) -> usize {
        match self {
            CheckScale::Tiny => 9,
            CheckScale::Small => 33,
        }
    }

    fn probes(self) -> usize {
        match self {
            CheckScale::Tiny => 6,
            CheckScale::Small => 12,
        }
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub report: GradcheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> DiffArray<f32> {
    let n = shape.iter().product();
    DiffArray::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape and data agree")
}

/// Magnitudes in [0.1, 1] with random sign.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> DiffArray<f32> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    DiffArray::new(shape, data).expect("shape and data agree")
}

/// Distinct values spaced well beyond the probe step, shuffled.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> DiffArray<f32> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.05).collect();
    data.shuffle(rng);
    DiffArray::new(shape, data).expect("shape and data agree")
}

fn run<T: Real, F>(name: &str, f: F, inputs: &[(&str, DiffArray<T>)], tol: f64) -> Result<CheckResult>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let step = if T::NAME == "f64" { LOSS_STEP } else { OP_STEP };
    let report = gradcheck(f, inputs, &GradcheckConfig::new(step, tol))?;
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: report.max_rel_err(),
        tolerance: tol,
        report,
    })
}

/// Per-operation checks: network ops in f32, loss terms in f64.
pub fn op_checks(scale: CheckScale) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = scale.points();
    let c = 4;
    let mut out = Vec::new();

    let (x, w, b) = (random(&mut rng, &[c, n], -1.0, 1.0), random(&mut rng, &[5, c], -1.0, 1.0), random(&mut rng, &[5], -1.0, 1.0));
    out.push(run(
        "pointwise_mlp",
        |t, v| t.pointwise_mlp(v[0], v[1], v[2]),
        &[("input", x), ("weight", w), ("bias", b)],
        OP_TOL,
    )?);

    let mask = random(&mut rng, &[c, n], -1.0, 1.0);
    let rm: Vec<f32> = (0..c).map(|k| 0.1 * k as f32).collect();
    let rv: Vec<f32> = (0..c).map(|k| 0.5 + 0.25 * k as f32).collect();
    for (label, mode) in [("batchnorm_train", BnMode::Train), ("batchnorm_eval", BnMode::Eval)] {
        let (x, g, b) = (random(&mut rng, &[c, n], -1.0, 1.0), random(&mut rng, &[c], 0.5, 1.5), random(&mut rng, &[c], -1.0, 1.0));
        out.push(run(
            label,
            |t, v| {
                let (y, _) = t.batchnorm1d(v[0], v[1], v[2], &rm, &rv, mode)?;
                let m = t.constant(mask.clone());
                t.mul(y, m)
            },
            &[("input", x), ("gamma", g), ("beta", b)],
            BN_CHAIN_TOL,
        )?);
    }

    out.push(run("relu", |t, v| Ok(t.relu(v[0])), &[("x", off_zero(&mut rng, &[c, n]))], OP_TOL)?);
    out.push(run(
        "sigmoid",
        |t, v| Ok(t.sigmoid(v[0])),
        &[("x", random(&mut rng, &[c, n], -3.0, 3.0))],
        OP_TOL,
    )?);
    out.push(run("maxpool_points", |t, v| t.maxpool_points(v[0]), &[("x", spaced(&mut rng, &[c, n]))], OP_TOL)?);

    let seg = n - n % 3;
    let w = random(&mut rng, &[c, 2 * 3], -1.0, 1.0);
    out.push(run(
        "maxpool_segments+repeat_columns",
        |t, v| {
            let p = t.maxpool_segments(v[0], seg / 3)?;
            let r = t.repeat_columns(p, 2)?;
            let w = t.constant(w.clone());
            t.mul(r, w)
        },
        &[("x", spaced(&mut rng, &[c, seg]))],
        OP_TOL,
    )?);

    let wc = random(&mut rng, &[c + 2, n], -1.0, 1.0);
    out.push(run(
        "concat+mul",
        |t, v| {
            let cat = t.concat(&[v[0], v[1]])?;
            let w = t.constant(wc.clone());
            t.mul(cat, w)
        },
        &[("a", random(&mut rng, &[c, n], -1.0, 1.0)), ("b", random(&mut rng, &[2, n], -1.0, 1.0))],
        OP_TOL,
    )?);

    let wt = random(&mut rng, &[3, c], -1.0, 1.0);
    let wb = random(&mut rng, &[c, 2], -1.0, 1.0);
    out.push(run(
        "tile+broadcast+transpose+gather+add+scale",
        |t, v| {
            let tiled = t.tile(v[0], 3)?;
            let w = t.constant(wt.clone());
            let a = t.mul(tiled, w)?;
            let cols = t.broadcast_columns(v[0], 2)?;
            let w = t.constant(wb.clone());
            let b = t.mul(cols, w)?;
            let bt = t.transpose(b)?;
            let g = t.gather_rows(bt, &[1, 0, 1])?;
            let s1 = t.sum(a);
            let s2 = t.sum(g);
            let s2 = t.scale(s2, 0.5);
            t.add(s1, s2)
        },
        &[("x", random(&mut rng, &[c], -1.0, 1.0))],
        OP_TOL,
    )?);

    let gt: Vec<[f64; 3]> = (0..2 * n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let gt = SpatialIndex::new(gt)?;
    let pred = random(&mut rng, &[n, 3], -1.0, 1.0).cast::<f64>();
    out.push(run("chamfer", |t, v| chamfer_term(t, v[0], &gt), &[("pred", pred)], OP_TOL)?);

    let sphere = icosphere(1, 1.0)?;
    let topo = MeshTopology::from_mesh(&sphere.base)?;
    let jitter: Vec<f64> = sphere
        .base
        .vertices()
        .iter()
        .flatten()
        .map(|&x| x + rng.random_range(-0.1..0.1))
        .collect();
    let verts = DiffArray::new(&[sphere.vertex_count(), 3], jitter)?;
    out.push(run("normal_consistency", |t, v| normal_term(t, v[0], &topo), &[("verts", verts.clone())], OP_TOL)?);
    out.push(run("laplacian", |t, v| laplacian_term(t, v[0], &topo), &[("verts", verts)], OP_TOL)?);

    let (x, w1, b1) = (random(&mut rng, &[3, n], -1.0, 1.0), random(&mut rng, &[c, 3], -1.0, 1.0), random(&mut rng, &[c], -0.1, 0.1));
    let (w2, b2) = (random(&mut rng, &[2, c], -1.0, 1.0), random(&mut rng, &[2], -0.1, 0.1));
    let (g, beta) = (DiffArray::full(&[c], 1.0)?, DiffArray::zeros(&[c])?);
    let rm = vec![0.0f32; c];
    let rv = vec![1.0f32; c];
    // a bias feeding train-mode batch norm has zero gradient, so it stays fixed
    out.push(run(
        "mlp+batchnorm+relu+mlp+maxpool",
        |t, v| {
            let b1 = t.constant(b1.clone());
            let h = t.pointwise_mlp(v[0], v[1], b1)?;
            let (h, _) = t.batchnorm1d(h, v[2], v[3], &rm, &rv, BnMode::Train)?;
            let h = t.relu(h);
            let y = t.pointwise_mlp(h, v[4], v[5])?;
            t.maxpool_points(y)
        },
        &[
            ("input", x),
            ("w1", w1),
            ("gamma", g),
            ("beta", beta),
            ("w2", w2),
            ("b2", b2),
        ],
        BN_CHAIN_TOL,
    )?);
    Ok(out)
}

/// Every trainable array of a freshly initialized network checked through
/// the complete weighted objective, in f64.
pub fn end_to_end_check(scale: CheckScale) -> Result<CheckResult> {
    let config = scale.model();
    let net = Network::<f32>::init(&config, 11)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cloud = |rng: &mut ChaCha8Rng, n: usize, r: f32| -> Result<PointCloud> {
        PointCloud::new((0..n).map(|_| std::array::from_fn(|_| rng.random_range(-r..r))).collect())
    };
    let input = cloud(&mut rng, config.input_points, 0.04)?;
    let gt = SpatialIndex::from_cloud(&cloud(&mut rng, 4 * config.input_points, 0.04)?)?;
    let input = net.input_array(&[&input])?;
    let weights = LossWeights::default();

    let trainable: Vec<usize> = (0..net.arrays().len()).filter(|&k| net.arrays()[k].trainable).collect();
    let inputs: Vec<(&str, DiffArray<f64>)> = trainable
        .iter()
        .map(|&k| (net.arrays()[k].name.as_str(), net.arrays()[k].array.clone()))
        .collect();
    let f = |tape: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let mut vars = Vec::with_capacity(net.arrays().len());
        let mut it = v.iter();
        for a in net.arrays() {
            vars.push(if a.trainable {
                *it.next().expect("one var per trainable array")
            } else {
                tape.constant(a.array.clone())
            });
        }
        let x = tape.constant(input.clone());
        let out = net.forward(tape, &vars, x, BnMode::Train)?;
        let loss = LossInputs {
            coarse: out.coarse,
            fine: out.fine,
            coarse_topology: net.coarse_topology(),
            fine_topology: net.fine_topology(),
            gt: &gt,
            smooth_coarse: true,
        };
        Ok(overall_loss(tape, &loss, &weights)?.0)
    };
    let cfg = GradcheckConfig::new(E2E_STEP, E2E_TOL).with_max_probes(scale.probes());
    let report = gradcheck(f, &inputs, &cfg)?;
    Ok(CheckResult {
        name: format!("end_to_end_{scale:?}").to_lowercase(),
        max_rel_err: report.max_rel_err(),
        tolerance: E2E_TOL,
        report,
    })
}

/// Operation checks followed by the end-to-end check.
pub fn full_suite(scale: CheckScale) -> Result<Vec<CheckResult>> {
    let mut out = op_checks(scale)?;
    out.push(end_to_end_check(scale)?);
    Ok(out)
}
