use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::geom::{flat_grid, icosphere};
use crate::ndiff::{gradcheck, DiffArray, GradcheckConfig};

fn cloud(points: &[[f32; 3]]) -> PointCloud {
    PointCloud::new(points.to_vec()).unwrap()
}

fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one_way = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / x.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

fn rotate(p: [f64; 3], yaw: f64, pitch: f64, t: [f64; 3]) -> [f64; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let a = [cy * p[0] - sy * p[1], sy * p[0] + cy * p[1], p[2]];
    let b = [a[0], cp * a[1] - sp * a[2], sp * a[1] + cp * a[2]];
    [b[0] + t[0], b[1] + t[1], b[2] + t[2]]
}

#[test]
fn chamfer_fixtures() {
    let x = cloud(&[[0.0, 1.0, 2.0], [3.0, -1.0, 0.5]]);
    assert_eq!(chamfer_loss(&x, &x).unwrap(), 0.0);
    let gt = cloud(&[[1.0, 0.0, 0.0]]);
    assert_eq!(chamfer_loss(&cloud(&[[0.0; 3]]), &gt).unwrap(), 2.0);
    assert_eq!(
        chamfer_loss(&cloud(&[[0.0; 3], [2.0, 0.0, 0.0]]), &gt).unwrap(),
        2.0
    );
    assert!(matches!(
        chamfer_loss(&PointCloud::default(), &gt),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn chamfer_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (na, nb) = (rng.random_range(1..200), rng.random_range(1..200));
        let a = random_points(&mut rng, na);
        let b = random_points(&mut rng, nb);
        let fast = chamfer_distance(&a, &b).unwrap();
        assert!((fast - brute_chamfer(&a, &b)).abs() <= 1e-9);
        assert!((fast - chamfer_distance(&b, &a).unwrap()).abs() <= 1e-12);
    }
}

fn two_faces(third: [f64; 3], face: [u32; 3]) -> TriangleMesh {
    TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], third],
        vec![[0, 1, 2], face],
    )
    .unwrap()
}

#[test]
fn normal_consistency_fixtures() {
    assert!(normal_consistency(&flat_grid(5, 4, 0.02).unwrap()).unwrap().abs() <= 1e-9);
    let right_angle = two_faces([0.0, 0.0, 1.0], [1, 0, 3]);
    assert!((normal_consistency(&right_angle).unwrap() - 1.0).abs() < 1e-12);
    let flipped = two_faces([0.0, -1.0, 0.0], [0, 1, 3]);
    assert!((normal_consistency(&flipped).unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn laplacian_fixtures() {
    let g = flat_grid(6, 6, 0.01).unwrap();
    let lap = crate::geom::uniform_laplacian(&g).unwrap();
    let boundary: f64 = (0..36)
        .filter(|&k| k % 6 == 0 || k % 6 == 5 || k / 6 == 0 || k / 6 == 5)
        .map(|k| crate::geom::norm(lap[k]))
        .sum();
    assert!((laplacian_loss(&g).unwrap() - boundary).abs() <= 1e-9);

    let pair = MeshTopology {
        faces: vec![],
        neighbors: vec![vec![1], vec![0]],
        face_pairs: vec![],
    };
    let (value, _) = laplacian_with_grad(&[[0.0; 3], [1.0, 0.0, 0.0]], &pair).unwrap();
    assert_eq!(value, 2.0);

    // adjacency rebuilt from scratch over all vertex pairs
    let m = icosphere(1, 0.05).unwrap().base;
    let v = m.vertices();
    let mut expect = 0.0;
    for i in 0..v.len() {
        let ring: Vec<usize> = (0..v.len())
            .filter(|&j| {
                j != i
                    && m.faces().iter().any(|f| {
                        f.contains(&(i as u32)) && f.contains(&(j as u32))
                    })
            })
            .collect();
        let mut l = v[i];
        for &j in &ring {
            for k in 0..3 {
                l[k] -= v[j][k] / ring.len() as f64;
            }
        }
        expect += crate::geom::norm(l);
    }
    assert!((laplacian_loss(&m).unwrap() - expect).abs() <= 1e-12);
}

#[test]
fn smoothing_terms_rigid_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = icosphere(2, 0.05).unwrap().base;
    let bumpy: Vec<[f64; 3]> = base
        .vertices()
        .iter()
        .map(|p| {
            let s = 1.0 + rng.random_range(-0.1..0.1);
            [p[0] * s, p[1] * s, p[2] * s]
        })
        .collect();
    let m = base.with_vertices(bumpy).unwrap();
    let (n0, l0) = (normal_consistency(&m).unwrap(), laplacian_loss(&m).unwrap());
    for _ in 0..5 {
        let (yaw, pitch) = (rng.random_range(0.0..6.3), rng.random_range(-1.5..1.5));
        let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let moved = m
            .with_vertices(m.vertices().iter().map(|&p| rotate(p, yaw, pitch, t)).collect())
            .unwrap();
        assert!((normal_consistency(&moved).unwrap() - n0).abs() <= 1e-6);
        assert!((laplacian_loss(&moved).unwrap() - l0).abs() <= 1e-6);
    }
}

fn array(points: &[[f64; 3]]) -> DiffArray<f64> {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    DiffArray::new(&[points.len(), 3], flat).unwrap()
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GradcheckConfig::new(1e-6, 1e-4);
    let gt = SpatialIndex::new(random_points(&mut rng, 50)).unwrap();
    let pred = random_points(&mut rng, 30);
    let report = gradcheck(|t, v| chamfer_term(t, v[0], &gt), &[("pred", array(&pred))], &cfg).unwrap();
    assert!(report.passed(), "{report:?}");

    let base = icosphere(1, 0.05).unwrap().base;
    let topo = MeshTopology::from_mesh(&base).unwrap();
    let jitter: Vec<[f64; 3]> = base
        .vertices()
        .iter()
        .map(|p| [p[0] + rng.random_range(-0.005..0.005), p[1], p[2] + rng.random_range(-0.005..0.005)])
        .collect();
    let report = gradcheck(|t, v| normal_term(t, v[0], &topo), &[("verts", array(&jitter))], &cfg).unwrap();
    assert!(report.passed(), "{report:?}");
    let report = gradcheck(|t, v| laplacian_term(t, v[0], &topo), &[("verts", array(&jitter))], &cfg).unwrap();
    assert!(report.passed(), "{report:?}");
}

fn overall_fixture(weights: &LossWeights) -> (f64, Vec<f64>, Vec<f64>, f64) {
    let c = icosphere(0, 0.05).unwrap().base;
    let d = icosphere(1, 0.05).unwrap().base;
    let (tc, td) = (MeshTopology::from_mesh(&c).unwrap(), MeshTopology::from_mesh(&d).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt_pts = random_points(&mut rng, 64)
        .into_iter()
        .map(|p| [p[0] * 0.04, p[1] * 0.04, p[2] * 0.04])
        .collect::<Vec<_>>();
    let gt = SpatialIndex::new(gt_pts.clone()).unwrap();
    let mut tape = Tape::<f64>::new();
    let yc = tape.leaf(array(c.vertices()).into_parameter());
    let yd = tape.leaf(array(d.vertices()).into_parameter());
    let inputs = LossInputs {
        coarse: yc,
        fine: yd,
        coarse_topology: &tc,
        fine_topology: &td,
        gt: &gt,
        smooth_coarse: false,
    };
    let (total, breakdown) = overall_loss(&mut tape, &inputs, weights).unwrap();
    assert_eq!(breakdown.total, tape.data(total)[0]);
    tape.backward(total).unwrap();
    let coarse_only = chamfer_distance(c.vertices(), &gt_pts).unwrap();
    (
        breakdown.total,
        tape.grad(yc).unwrap().to_vec(),
        tape.grad(yd).map_or_else(|| vec![0.0; 3 * d.vertex_count()], <[f64]>::to_vec),
        coarse_only,
    )
}

#[test]
fn overall_loss_weighting() {
    let (total, _, gd, coarse) = overall_fixture(&LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap());
    assert_eq!(total, coarse);
    assert!(gd.iter().all(|&g| g == 0.0));

    let w = LossWeights::default();
    let double = LossWeights::new(2.0, 2.0, 0.2, 0.2).unwrap();
    let (t1, gc1, gd1, _) = overall_fixture(&w);
    let (t2, gc2, gd2, _) = overall_fixture(&double);
    assert!((t2 - 2.0 * t1).abs() <= 1e-12 * t1.abs());
    for (a, b) in gc1.iter().chain(&gd1).zip(gc2.iter().chain(&gd2)) {
        assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1e-12));
    }
    assert!(LossWeights::new(0.0, 0.0, 0.0, 0.0).is_err());
    assert!(LossWeights::new(1.0, -1.0, 0.0, 0.0).is_err());
}

#[test]
fn metric_fixtures() {
    let x = cloud(&[[0.01, 0.0, 0.0], [0.0, 0.02, 0.03]]);
    let same = eval_metrics(&x, &x, 5.0).unwrap();
    assert_eq!((same.dc_mm, same.precision, same.recall, same.fscore), (0.0, 100.0, 100.0, 100.0));

    let r = eval_metrics(&cloud(&[[0.0; 3]]), &cloud(&[[0.0; 3], [0.01, 0.0, 0.0]]), 5.0).unwrap();
    assert_eq!((r.precision, r.recall), (100.0, 50.0));
    assert!((r.fscore - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!((r.n_pred, r.n_gt), (1, 2));
    let json = serde_json::to_value(&r).unwrap();
    for key in ["dc_mm", "fscore", "precision", "recall", "tau_mm", "n_pred", "n_gt"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!(eval_metrics(&x, &x, 0.0).is_err());
    assert!(eval_metrics(&PointCloud::default(), &x, 5.0).is_err());
}

proptest! {
    #[test]
    fn precision_recall_monotone_in_tau(
        a in proptest::collection::vec(proptest::array::uniform3(-0.05f32..0.05), 1..40),
        b in proptest::collection::vec(proptest::array::uniform3(-0.05f32..0.05), 1..40),
        t1 in 0.1f64..30.0,
        dt in 0.0f64..30.0,
    ) {
        let (a, b) = (cloud(&a), cloud(&b));
        let lo = eval_metrics(&a, &b, t1).unwrap();
        let hi = eval_metrics(&a, &b, t1 + dt.max(1e-9)).unwrap();
        prop_assert!(hi.precision >= lo.precision && hi.recall >= lo.recall);
        prop_assert!(lo.fscore >= 0.0 && lo.fscore <= 100.0);
    }

    #[test]
    fn chamfer_permutation_invariant(
        a in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 1..30),
        b in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 1..30),
    ) {
        let mut rev = a.clone();
        rev.reverse();
        let x = chamfer_distance(&a, &b).unwrap();
        prop_assert!((x - chamfer_distance(&rev, &b).unwrap()).abs() <= 1e-12);
        prop_assert!((x - brute_chamfer(&a, &b)).abs() <= 1e-9);
    }
}

#[test]
fn zero_weight_terms_are_skipped() {
    // collapsed fine mesh: the normal term would fail on its first face
    let d = icosphere(1, 0.05).unwrap().base;
    let topo = MeshTopology::from_mesh(&d).unwrap();
    let gt = SpatialIndex::new(vec![[0.0; 3], [0.01, 0.0, 0.0]]).unwrap();
    let mut tape = Tape::<f64>::new();
    let flat = tape.leaf(DiffArray::zeros(&[d.vertex_count(), 3]).unwrap().into_parameter());
    let inputs = LossInputs {
        coarse: flat,
        fine: flat,
        coarse_topology: &topo,
        fine_topology: &topo,
        gt: &gt,
        smooth_coarse: false,
    };
    let (_, b) = overall_loss(&mut tape, &inputs, &LossWeights::new(1.0, 1.0, 0.0, 0.1).unwrap()).unwrap();
    assert_eq!(b.normal, 0.0);
    assert!(matches!(
        overall_loss(&mut tape, &inputs, &LossWeights::default()),
        Err(Error::DegenerateFace { .. })
    ));
}
