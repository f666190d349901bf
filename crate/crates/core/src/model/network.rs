use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::geom::{icosphere, parent_map, MeshTopology, PointCloud, Prototype, TriangleMesh};
use crate::ingest::resample;
use crate::ndiff::{BatchStats, BnMode, DiffArray, Real, Tape, Var};

/// One stored array of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T: Real> {
    pub name: String,
    pub array: DiffArray<T>,
    /// Updated by the optimizer; false for batch-norm running statistics.
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Linear,
    bn: Norm,
    conv2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    blocks: Vec<Block>,
    generator: Vec<Linear>,
    /// First dense layer split into its per-vertex and global columns.
    dense_local: usize,
    dense_global: usize,
    dense_bias: usize,
    dense_norms: Vec<Norm>,
    /// Dense layers after the first, the last one producing 3 channels.
    dense_rest: Vec<Linear>,
    proto_coarse: Option<usize>,
    proto_fine: Option<usize>,
}

/// Array names and shapes in storage order, with the index layout.
fn plan(config: &ModelConfig) -> (Vec<(String, Vec<usize>, bool)>, Layout) {
    let mut specs: Vec<(String, Vec<usize>, bool)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, trainable: bool| {
        specs.push((name, shape, trainable));
        specs.len() - 1
    };
    let linear = |add: &mut dyn FnMut(String, Vec<usize>, bool) -> usize, prefix: &str, out: usize, inp: usize| Linear {
        w: add(format!("{prefix}.weight"), vec![out, inp], true),
        b: add(format!("{prefix}.bias"), vec![out], true),
    };
    let norm = |add: &mut dyn FnMut(String, Vec<usize>, bool) -> usize, prefix: &str, c: usize| Norm {
        gamma: add(format!("{prefix}.gamma"), vec![c], true),
        beta: add(format!("{prefix}.beta"), vec![c], true),
        mean: add(format!("{prefix}.running_mean"), vec![c], false),
        var: add(format!("{prefix}.running_var"), vec![c], false),
    };

    let mut blocks = Vec::new();
    let mut input = 3;
    for (k, &[hidden, out]) in config.extractor.iter().enumerate() {
        let conv1 = linear(&mut add, &format!("extractor.{k}.conv1"), hidden, input);
        let bn = norm(&mut add, &format!("extractor.{k}.bn"), hidden);
        let conv2 = linear(&mut add, &format!("extractor.{k}.conv2"), out, hidden);
        blocks.push(Block { conv1, bn, conv2 });
        input = 2 * out;
    }

    let mut generator = Vec::new();
    let mut width = config.global_dim;
    for (k, &h) in config.generator.iter().enumerate() {
        generator.push(linear(&mut add, &format!("generator.{k}"), h, width));
        width = h;
    }
    let vc3 = 3 * config.coarse_vertices();
    generator.push(linear(&mut add, &format!("generator.{}", config.generator.len()), vc3, width));

    let w0 = config.dense[0];
    let dense_local = add("dense.0.weight_local".into(), vec![w0, 6], true);
    let dense_global = add("dense.0.weight_global".into(), vec![w0, config.global_dim], true);
    let dense_bias = add("dense.0.bias".into(), vec![w0], true);
    let mut dense_norms = vec![norm(&mut add, "dense.0.bn", w0)];
    let mut dense_rest = Vec::new();
    let mut width = w0;
    for (k, &h) in config.dense.iter().enumerate().skip(1) {
        dense_rest.push(linear(&mut add, &format!("dense.{k}"), h, width));
        dense_norms.push(norm(&mut add, &format!("dense.{k}.bn"), h));
        width = h;
    }
    dense_rest.push(linear(&mut add, &format!("dense.{}", config.dense.len()), 3, width));

    let (proto_coarse, proto_fine) = if config.use_prototypes {
        (
            Some(add("prototype.coarse".into(), vec![config.coarse_vertices(), 3], true)),
            Some(add("prototype.fine".into(), vec![config.fine_vertices(), 3], true)),
        )
    } else {
        (None, None)
    };
    let layout = Layout {
        blocks,
        generator,
        dense_local,
        dense_global,
        dense_bias,
        dense_norms,
        dense_rest,
        proto_coarse,
        proto_fine,
    };
    (specs, layout)
}

fn fan_in(shape: &[usize]) -> usize {
    shape.get(1).copied().unwrap_or(1)
}

/// Results of one forward pass over a batch of `batch` clouds.
#[derive(Debug)]
pub struct ForwardOutput<T: Real> {
    pub batch: usize,
    /// Global features, `global_dim × batch`.
    pub global: Var,
    /// Coarse and dense features, `(batch·V)×3`, sample-major.
    pub c: Var,
    pub d: Var,
    /// Per-vertex decoder input `[seed; parent c]`, `6×(B·V_d)`; the
    /// global features join after the first layer's matrix product.
    pub dense_input: Var,
    /// Refined coarse and fine points, same layout as `c` and `d`.
    pub coarse: Var,
    pub fine: Var,
    /// Batch statistics per normalization layer, in training mode.
    pub stats: Vec<(usize, BatchStats<T>)>,
}

/// Generator outputs.
#[derive(Debug, Clone, Copy)]
pub struct Shapes {
    pub c: Var,
    pub d: Var,
    pub dense_input: Var,
}

/// Predictions of one input cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub coarse: PointCloud,
    pub fine: PointCloud,
    pub coarse_mesh: TriangleMesh,
    pub fine_mesh: TriangleMesh,
}

/// Feature extractor, shape generator and prototype refiner.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    config: ModelConfig,
    arrays: Vec<NamedArray<T>>,
    layout: Layout,
    coarse: Prototype,
    fine: Prototype,
    parent: Vec<usize>,
    /// Unit-sphere fine vertices, `3×V_d`.
    seeds: Vec<T>,
    coarse_topology: MeshTopology,
    fine_topology: MeshTopology,
}

impl<T: Real> Network<T> {
    /// Seeded fan-in uniform weights, unit batch-norm scales and icosphere
    /// prototypes.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(config);
        let (coarse, fine) = Self::prototypes(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays = Vec::with_capacity(specs.len());
        for (k, (name, shape, trainable)) in specs.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".gamma") || name.ends_with(".running_var") {
                vec![1.0; n]
            } else if name.ends_with(".beta") || name.ends_with(".running_mean") {
                vec![0.0; n]
            } else if Some(k) == layout.proto_coarse {
                coarse.base.vertices().iter().flatten().copied().collect()
            } else if Some(k) == layout.proto_fine {
                fine.base.vertices().iter().flatten().copied().collect()
            } else {
                // the split first dense layer keeps the fan-in of the whole layer
                let fan = if [layout.dense_local, layout.dense_global, layout.dense_bias].contains(&k) {
                    6 + config.global_dim
                } else if name.ends_with(".bias") {
                    fan_in(&specs[k - 1].1)
                } else {
                    fan_in(shape)
                };
                let bound = 1.0 / (fan as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            arrays.push(NamedArray {
                name: name.clone(),
                array: DiffArray::from_f64(shape, &data)?,
                trainable: *trainable,
            });
        }
        Self::assemble(config.clone(), arrays, layout, coarse, fine)
    }

    fn prototypes(config: &ModelConfig) -> Result<(Prototype, Prototype)> {
        Ok((
            icosphere(config.coarse_level, config.radius)?,
            icosphere(config.fine_level, config.radius)?,
        ))
    }

    fn assemble(
        config: ModelConfig,
        mut arrays: Vec<NamedArray<T>>,
        layout: Layout,
        coarse: Prototype,
        fine: Prototype,
    ) -> Result<Self> {
        for a in &mut arrays {
            a.array.set_requires_grad(a.trainable);
        }
        let parent = parent_map(&coarse, &fine)?;
        let unit = fine.unit_vertices();
        let mut seeds = vec![T::zero(); 3 * unit.len()];
        for (j, p) in unit.iter().enumerate() {
            for k in 0..3 {
                seeds[k * unit.len() + j] = T::of(p[k]);
            }
        }
        Ok(Network {
            coarse_topology: MeshTopology::from_mesh(&coarse.base)?,
            fine_topology: MeshTopology::from_mesh(&fine.base)?,
            config,
            arrays,
            layout,
            coarse,
            fine,
            parent,
            seeds,
        })
    }

    /// Rebuilds a network from stored arrays, checking names and shapes.
    pub fn from_arrays(config: &ModelConfig, stored: Vec<(String, DiffArray<T>)>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(config);
        if stored.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "{} arrays stored, architecture needs {}",
                stored.len(),
                specs.len()
            )));
        }
        let mut arrays = Vec::with_capacity(specs.len());
        for ((name, array), (want, shape, trainable)) in stored.into_iter().zip(&specs) {
            if &name != want || array.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` {:?} does not match expected `{want}` {shape:?}",
                    array.shape()
                )));
            }
            arrays.push(NamedArray {
                name,
                array,
                trainable: *trainable,
            });
        }
        let (coarse, fine) = Self::prototypes(config)?;
        Self::assemble(config.clone(), arrays, layout, coarse, fine)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let stored = self
            .arrays
            .iter()
            .map(|a| (a.name.clone(), a.array.cast::<U>()))
            .collect();
        Network::from_arrays(&self.config, stored).expect("same architecture")
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arrays(&self) -> &[NamedArray<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [NamedArray<T>] {
        &mut self.arrays
    }

    pub fn coarse_prototype(&self) -> &Prototype {
        &self.coarse
    }

    pub fn fine_prototype(&self) -> &Prototype {
        &self.fine
    }

    pub fn parent(&self) -> &[usize] {
        &self.parent
    }

    pub fn coarse_topology(&self) -> &MeshTopology {
        &self.coarse_topology
    }

    pub fn fine_topology(&self) -> &MeshTopology {
        &self.fine_topology
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays.iter().filter(|a| a.trainable).map(|a| a.array.numel()).sum()
    }

    /// Records every array on the tape: trainable ones as tracked leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.arrays
            .iter()
            .map(|a| {
                if a.trainable {
                    tape.leaf(a.array.clone())
                } else {
                    tape.constant(a.array.clone())
                }
            })
            .collect()
    }

    /// Clouds as a `3×(B·N)` input array, sample-major columns.
    pub fn input_array(&self, clouds: &[&PointCloud]) -> Result<DiffArray<T>> {
        let n = self.config.input_points;
        if clouds.is_empty() {
            return Err(Error::EmptyInput("forward pass over zero clouds".into()));
        }
        if let Some(c) = clouds.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension(format!(
                "network expects {n} input points, got {}",
                c.len()
            )));
        }
        let cols = n * clouds.len();
        let mut data = vec![T::zero(); 3 * cols];
        for (b, c) in clouds.iter().enumerate() {
            for (j, p) in c.points().iter().enumerate() {
                for k in 0..3 {
                    data[k * cols + b * n + j] = T::of(p[k] as f64);
                }
            }
        }
        DiffArray::new(&[3, cols], data)
    }

    fn norm(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        n: &Norm,
        mode: BnMode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
        id: usize,
    ) -> Result<Var> {
        let (y, s) = tape.batchnorm1d(
            x,
            vars[n.gamma],
            vars[n.beta],
            self.arrays[n.mean].array.data(),
            self.arrays[n.var].array.data(),
            mode,
        )?;
        if let Some(s) = s {
            stats.push((id, s));
        }
        Ok(y)
    }

    /// Global features `global_dim × B` of a `3×(B·N)` input.
    pub fn extract_features(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        mode: BnMode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let n = self.config.input_points;
        let shape = tape.shape(input).to_vec();
        if shape.len() != 2 || shape[0] != 3 || !shape[1].is_multiple_of(n) || shape[1] == 0 {
            return Err(Error::Dimension(format!(
                "input {shape:?} is not 3×(B·{n})"
            )));
        }
        let mut h = input;
        let last = self.layout.blocks.len() - 1;
        for (k, block) in self.layout.blocks.iter().enumerate() {
            let a = tape.pointwise_mlp(h, vars[block.conv1.w], vars[block.conv1.b])?;
            let a = self.norm(tape, vars, a, &block.bn, mode, stats, block.bn.mean)?;
            let a = tape.relu(a);
            let a = tape.pointwise_mlp(a, vars[block.conv2.w], vars[block.conv2.b])?;
            let pooled = tape.maxpool_segments(a, n)?;
            if k == last {
                return Ok(pooled);
            }
            let spread = tape.repeat_columns(pooled, n)?;
            h = tape.concat(&[a, spread])?;
        }
        unreachable!("extractor has at least one block")
    }

    /// Coarse `(B·V_c)×3` and dense `(B·V_d)×3` features.
    pub fn generate_shapes(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        global: Var,
        mode: BnMode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Shapes> {
        if !tape.value(global).is_finite() {
            return Err(Error::NonFinite("global feature vector".into()));
        }
        let batch = match tape.shape(global) {
            [c, b] if *c == self.config.global_dim => *b,
            s => {
                return Err(Error::Dimension(format!(
                    "global features {s:?}, expected {}×B",
                    self.config.global_dim
                )))
            }
        };
        let (vc, vd) = (self.config.coarse_vertices(), self.config.fine_vertices());

        let mut h = global;
        let last = self.layout.generator.len() - 1;
        for (k, l) in self.layout.generator.iter().enumerate() {
            h = tape.pointwise_mlp(h, vars[l.w], vars[l.b])?;
            if k < last {
                h = tape.relu(h);
            }
        }
        let c = tape.transpose(h)?;
        let c = tape.reshape(c, &[batch * vc, 3])?;

        let mut seeds = Vec::with_capacity(3 * batch * vd);
        for row in self.seeds.chunks_exact(vd) {
            for _ in 0..batch {
                seeds.extend_from_slice(row);
            }
        }
        let seeds = tape.constant(DiffArray::new(&[3, batch * vd], seeds)?);
        let index: Vec<usize> = (0..batch)
            .flat_map(|b| self.parent.iter().map(move |&p| b * vc + p))
            .collect();
        let parents = tape.gather_rows(c, &index)?;
        let parents = tape.transpose(parents)?;
        let local = tape.concat(&[seeds, parents])?;

        let w0 = self.config.dense[0];
        let zero = tape.constant(DiffArray::zeros(&[w0])?);
        let per_vertex = tape.pointwise_mlp(local, vars[self.layout.dense_local], vars[self.layout.dense_bias])?;
        let shared = tape.pointwise_mlp(global, vars[self.layout.dense_global], zero)?;
        let shared = tape.repeat_columns(shared, vd)?;
        let mut h = tape.add(per_vertex, shared)?;
        let norms = &self.layout.dense_norms;
        h = self.norm(tape, vars, h, &norms[0], mode, stats, norms[0].mean)?;
        h = tape.relu(h);
        for (k, l) in self.layout.dense_rest.iter().enumerate() {
            h = tape.pointwise_mlp(h, vars[l.w], vars[l.b])?;
            if let Some(nm) = norms.get(k + 1) {
                h = self.norm(tape, vars, h, nm, mode, stats, nm.mean)?;
                h = tape.relu(h);
            }
        }
        let d = tape.transpose(h)?;
        Ok(Shapes {
            c,
            d,
            dense_input: local,
        })
    }

    /// Gates features against the prototype vertices of every sample.
    pub fn refine(&self, tape: &mut Tape<T>, vars: &[Var], c: Var, d: Var) -> Result<(Var, Var)> {
        let (vc, vd) = (self.config.coarse_vertices(), self.config.fine_vertices());
        let gate = |tape: &mut Tape<T>, x: Var, proto: Option<usize>, v: usize| -> Result<Var> {
            let rows = match tape.shape(x) {
                [r, 3] if r % v == 0 => *r,
                s => {
                    return Err(Error::Dimension(format!(
                        "features {s:?} are not (B·{v})×3"
                    )))
                }
            };
            let Some(p) = proto else {
                return Ok(x);
            };
            let index: Vec<usize> = (0..rows).map(|r| r % v).collect();
            let verts = tape.gather_rows(vars[p], &index)?;
            let g = tape.sigmoid(x);
            tape.mul(g, verts)
        };
        let yc = gate(tape, c, self.layout.proto_coarse, vc)?;
        let yd = gate(tape, d, self.layout.proto_fine, vd)?;
        Ok((yc, yd))
    }

    /// Full forward pass for a `3×(B·N)` input.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        mode: BnMode,
    ) -> Result<ForwardOutput<T>> {
        if vars.len() != self.arrays.len() {
            return Err(Error::Dimension(format!(
                "{} bound arrays for a network of {}",
                vars.len(),
                self.arrays.len()
            )));
        }
        let mut stats = Vec::new();
        let global = self.extract_features(tape, vars, input, mode, &mut stats)?;
        let batch = tape.shape(global)[1];
        let Shapes { c, d, dense_input } = self.generate_shapes(tape, vars, global, mode, &mut stats)?;
        let (coarse, fine) = self.refine(tape, vars, c, d)?;
        Ok(ForwardOutput {
            batch,
            global,
            c,
            d,
            dense_input,
            coarse,
            fine,
            stats,
        })
    }

    /// Folds training-mode batch statistics into the running buffers.
    pub fn apply_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (mean, s) in stats {
            let (m, rest) = self.arrays.split_at_mut(mean + 1);
            s.update_running(m[*mean].array.data_mut(), rest[0].array.data_mut());
        }
    }

    /// Resamples `cloud` to `input_points` with a seeded stream, then
    /// predicts.
    pub fn predict_resampled(&self, cloud: &PointCloud, seed: u64) -> Result<Prediction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.predict(&resample(cloud, self.config.input_points, &mut rng)?)
    }

    /// Inference-mode prediction for one cloud of exactly `input_points`.
    pub fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.arrays.iter().map(|a| tape.constant(a.array.clone())).collect();
        let input = tape.constant(self.input_array(&[cloud])?);
        let out = self.forward(&mut tape, &vars, input, BnMode::Eval)?;
        let to_cloud = |v: Var| -> Result<PointCloud> {
            let pts: Vec<[f32; 3]> = tape
                .data(v)
                .chunks_exact(3)
                .map(|p| [p[0].f64() as f32, p[1].f64() as f32, p[2].f64() as f32])
                .collect();
            PointCloud::new(pts)
        };
        let coarse = to_cloud(out.coarse)?;
        let fine = to_cloud(out.fine)?;
        let mesh = |cloud: &PointCloud, proto: &Prototype| {
            TriangleMesh::new(cloud.points_f64(), proto.base.faces().to_vec())
        };
        Ok(Prediction {
            coarse_mesh: mesh(&coarse, &self.coarse)?,
            fine_mesh: mesh(&fine, &self.fine)?,
            coarse,
            fine,
        })
    }
}
