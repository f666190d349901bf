use super::real::{gemm, MatRef};
use super::{DiffArray, Real};
use crate::error::{Error, Result};

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by batch statistics and report them for the running update.
    Train,
    /// Normalize by the supplied running statistics.
    Eval,
}

/// Per-channel statistics of one training batch (unbiased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchStats<T> {
    /// Blends these statistics into running buffers with [`BN_MOMENTUM`].
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T]) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for (r, &b) in running_mean.iter_mut().zip(&self.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in running_var.iter_mut().zip(&self.var) {
            *r = keep * *r + m * b;
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        segments: usize,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Tile(Var),
    BroadcastColumns(Var, usize),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    ScalarFn {
        x: Var,
        local: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: DiffArray<T>,
    op: Op<T>,
    tracked: bool,
}

/// Linear record of executed operations, replayed in reverse by
/// [`Tape::backward`]. Only leaves keep their gradients afterwards.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input; gradients are tracked iff the array requires them.
    pub fn leaf(&mut self, array: DiffArray<T>) -> Var {
        let tracked = array.requires_grad();
        self.push(array, Op::Leaf, tracked)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, array: DiffArray<T>) -> Var {
        self.push(array, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DiffArray<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last backward pass; available for leaves only.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: DiffArray<T>, op: Op<T>, tracked: bool) -> Var {
        if self.consumed {
            // a new forward pass after backward starts a fresh adjoint record
            self.consumed = false;
            self.grads.iter_mut().for_each(|g| *g = None);
        }
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn new_array(shape: &[usize], data: Vec<T>) -> DiffArray<T> {
        DiffArray::new(shape, data).expect("internal shape bookkeeping")
    }

    /// Shared per-point linear map: `out[o,n] = Σ_i w[o,i]·x[i,n] + b[o]`.
    pub fn pointwise_mlp(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, n) = self.matrix_dims(x, "pointwise_mlp input")?;
        let wshape = self.shape(w).to_vec();
        if wshape.len() != 2 || wshape[1] != cin {
            return Err(Error::Dimension(format!(
                "pointwise_mlp weight {wshape:?} does not consume {cin} input channels"
            )));
        }
        let cout = wshape[0];
        if self.value(b).numel() != cout || self.value(b).ndim() != 1 {
            return Err(Error::Dimension(format!(
                "pointwise_mlp bias {:?} for {cout} output channels",
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); cout * n];
        gemm(
            MatRef::row_major(self.data(w), cout, cin),
            MatRef::row_major(self.data(x), cin, n),
            &mut out,
            false,
        );
        for (row, &bias) in out.chunks_exact_mut(n).zip(self.data(b)) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        let tracked = self.tracked(&[x, w, b]);
        let shape = if self.value(x).ndim() == 1 {
            vec![cout]
        } else {
            vec![cout, n]
        };
        Ok(self.push(Self::new_array(&shape, out), Op::Linear { x, w, b }, tracked))
    }

    fn matrix_dims(&self, x: Var, what: &str) -> Result<(usize, usize)> {
        let v = self.value(x);
        match v.shape() {
            [c] => Ok((*c, 1)),
            [c, n] => Ok((*c, *n)),
            s => Err(Error::Dimension(format!("{what} must be 1-D or 2-D, got {s:?}"))),
        }
    }

    /// Batch normalization of a `C×N` array over the point axis.
    ///
    /// In [`BnMode::Train`] the batch statistics are returned so the caller
    /// can fold them into its running buffers.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        mode: BnMode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (c, n) = self.matrix_dims(x, "batchnorm1d input")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).numel() != c {
                return Err(Error::Dimension(format!(
                    "batchnorm1d {name} has {} entries for {c} channels",
                    self.value(v).numel()
                )));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Dimension(format!(
                "batchnorm1d running stats sized {}/{} for {c} channels",
                running_mean.len(),
                running_var.len()
            )));
        }
        let train = mode == BnMode::Train;
        if train && n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "training-mode batch norm needs at least 2 points, got {n}"
            )));
        }
        let xs = self.data(x);
        let gs = self.data(gamma);
        let bs = self.data(beta);
        let mut out = vec![T::zero(); c * n];
        let mut xhat = vec![T::zero(); c * n];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = train.then(|| BatchStats {
            mean: vec![T::zero(); c],
            var: vec![T::zero(); c],
        });
        for ch in 0..c {
            let row = &xs[ch * n..(ch + 1) * n];
            let (mean, var) = if train {
                let mean = row.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
                let ss = row
                    .iter()
                    .map(|v| {
                        let d = v.f64() - mean;
                        d * d
                    })
                    .sum::<f64>();
                let st = stats.as_mut().expect("train mode");
                st.mean[ch] = T::of(mean);
                st.var[ch] = T::of(ss / (n - 1) as f64);
                (mean, ss / n as f64)
            } else {
                (running_mean[ch].f64(), running_var[ch].f64())
            };
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = T::of(istd);
            let g = gs[ch];
            let b = bs[ch];
            for k in 0..n {
                let h = T::of((row[k].f64() - mean) * istd);
                xhat[ch * n + k] = h;
                out[ch * n + k] = g * h + b;
            }
        }
        let tracked = self.tracked(&[x, gamma, beta]);
        let shape = self.shape(x).to_vec();
        let var = self.push(
            Self::new_array(&shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            tracked,
        );
        Ok((var, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let shape = v.shape().to_vec();
        let tracked = self.tracked(&[x]);
        self.push(Self::new_array(&shape, data), Op::Relu(x), tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| sigmoid(a)).collect();
        let shape = v.shape().to_vec();
        let tracked = self.tracked(&[x]);
        self.push(Self::new_array(&shape, data), Op::Sigmoid(x), tracked)
    }

    /// Per-channel maximum over the point axis of a `C×N` array.
    pub fn maxpool_points(&mut self, x: Var) -> Result<Var> {
        let n = match self.shape(x) {
            [_, n] => *n,
            s => {
                return Err(Error::Dimension(format!(
                    "maxpool_points expects C×N, got {s:?}"
                )))
            }
        };
        if n == 0 {
            return Err(Error::EmptyInput("maxpool_points over zero points".into()));
        }
        self.pool(x, n, true)
    }

    /// Per-channel maximum within consecutive column blocks of `len`:
    /// `C×(B·len) → C×B`.
    pub fn maxpool_segments(&mut self, x: Var, len: usize) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 || len == 0 || !v.shape()[1].is_multiple_of(len) {
            return Err(Error::Dimension(format!(
                "maxpool_segments: {:?} does not split into blocks of {len}",
                v.shape()
            )));
        }
        self.pool(x, len, false)
    }

    fn pool(&mut self, x: Var, len: usize, squeeze: bool) -> Result<Var> {
        let v = self.value(x);
        let (c, n) = v.rows_cols();
        let segments = n / len;
        let mut out = Vec::with_capacity(c * segments);
        let mut argmax = Vec::with_capacity(c * segments);
        for row in v.data().chunks_exact(n) {
            for (s, block) in row.chunks_exact(len).enumerate() {
                let mut best = 0;
                for (k, &val) in block.iter().enumerate().skip(1) {
                    if val > block[best] {
                        best = k;
                    }
                }
                out.push(block[best]);
                argmax.push(s * len + best);
            }
        }
        let shape = if squeeze { vec![c] } else { vec![c, segments] };
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            Self::new_array(&shape, out),
            Op::MaxPool { x, segments, argmax },
            tracked,
        ))
    }

    /// Joins arrays along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::EmptyInput("concat of zero arrays".into()))?;
        let tail: Vec<usize> = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::Dimension(format!(
                    "concat: shape {s:?} incompatible with trailing extents {tail:?}"
                )));
            }
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let tracked = self.tracked(parts);
        Ok(self.push(
            Self::new_array(&shape, data),
            Op::Concat(parts.to_vec()),
            tracked,
        ))
    }

    /// Stacks `reps` copies of a 1-D array as rows: `[L] → [reps×L]`.
    pub fn tile(&mut self, x: Var, reps: usize) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 1 || reps == 0 {
            return Err(Error::Dimension(format!(
                "tile expects a 1-D array and reps ≥ 1, got {:?}×{reps}",
                v.shape()
            )));
        }
        let len = v.numel();
        let mut data = Vec::with_capacity(len * reps);
        for _ in 0..reps {
            data.extend_from_slice(v.data());
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Self::new_array(&[reps, len], data), Op::Tile(x), tracked))
    }

    /// Repeats a 1-D array across `n` columns: `[C] → [C×n]`.
    pub fn broadcast_columns(&mut self, x: Var, n: usize) -> Result<Var> {
        if self.value(x).ndim() != 1 || n == 0 {
            return Err(Error::Dimension(format!(
                "broadcast_columns expects a 1-D array and n ≥ 1, got {:?}×{n}",
                self.shape(x)
            )));
        }
        self.repeat(x, n)
    }

    /// Repeats every column `reps` times in place: `C×B → C×(B·reps)`.
    pub fn repeat_columns(&mut self, x: Var, reps: usize) -> Result<Var> {
        if self.value(x).ndim() != 2 || reps == 0 {
            return Err(Error::Dimension(format!(
                "repeat_columns expects a 2-D array and reps ≥ 1, got {:?}×{reps}",
                self.shape(x)
            )));
        }
        self.repeat(x, reps)
    }

    fn repeat(&mut self, x: Var, reps: usize) -> Result<Var> {
        let (c, b) = self.matrix_dims(x, "repeat")?;
        let mut data = Vec::with_capacity(c * b * reps);
        for &val in self.data(x) {
            data.extend(std::iter::repeat_n(val, reps));
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            Self::new_array(&[c, b * reps], data),
            Op::BroadcastColumns(x, reps),
            tracked,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "elementwise_mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&p, &q)| p * q)
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Self::new_array(&shape, data), Op::Mul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Self::new_array(&shape, data), Op::Add(a, b), tracked))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a * factor).collect();
        let shape = v.shape().to_vec();
        let tracked = self.tracked(&[x]);
        self.push(Self::new_array(&shape, data), Op::Scale(x, factor), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().map(|v| v.f64()).sum::<f64>();
        let tracked = self.tracked(&[x]);
        self.push(DiffArray::scalar(T::of(total)), Op::Sum(x), tracked)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let value = Self::new_array(shape, value.into_data());
        let tracked = self.tracked(&[x]);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 {
            return Err(Error::Dimension(format!(
                "transpose expects 2-D, got {:?}",
                v.shape()
            )));
        }
        let (r, c) = v.rows_cols();
        let src = v.data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Self::new_array(&[c, r], data), Op::Transpose(x), tracked))
    }

    /// Selects rows of an `R×C` array: `out[k,:] = x[index[k],:]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 || index.is_empty() {
            return Err(Error::Dimension(format!(
                "gather_rows expects 2-D input and a non-empty index, got {:?}",
                v.shape()
            )));
        }
        let (r, c) = v.rows_cols();
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::Dimension(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let src = v.data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            Self::new_array(&[index.len(), c], data),
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            tracked,
        ))
    }

    /// Records a scalar function of `x` whose value and gradient were
    /// computed by the caller.
    pub fn scalar_fn(&mut self, x: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        if local_grad.len() != self.value(x).numel() {
            return Err(Error::Dimension(format!(
                "scalar_fn gradient has {} entries for an input of {}",
                local_grad.len(),
                self.value(x).numel()
            )));
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            DiffArray::scalar(value),
            Op::ScalarFn {
                x,
                local: local_grad,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a single-element output. A tape can be swept once
    /// per forward pass.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(out).numel() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(out)
            )));
        }
        self.consumed = true;
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[out.0].tracked {
            return Ok(());
        }
        self.grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, f: impl FnOnce(&mut [T], &[Node<T>])) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot, &self.nodes);
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Op payloads are moved out temporarily so sibling nodes stay borrowable.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (cin, n) = self.matrix_dims(*x, "").expect("validated in forward");
                let cout = self.value(*w).shape()[0];
                self.accum(*x, |dx, nodes| {
                    let wd = nodes[w.0].value.data();
                    gemm(
                        MatRef::row_major(wd, cout, cin).t(),
                        MatRef::row_major(g, cout, n),
                        dx,
                        true,
                    );
                });
                self.accum(*w, |dw, nodes| {
                    let xd = nodes[x.0].value.data();
                    gemm(
                        MatRef::row_major(g, cout, n),
                        MatRef::row_major(xd, cin, n).t(),
                        dw,
                        true,
                    );
                });
                self.accum(*b, |db, _| {
                    for (d, row) in db.iter_mut().zip(g.chunks_exact(n)) {
                        *d += T::of(row.iter().map(|v| v.f64()).sum::<f64>());
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (c, n) = self.matrix_dims(*x, "").expect("validated in forward");
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for ch in 0..c {
                    for k in 0..n {
                        let gv = g[ch * n + k].f64();
                        sum_g[ch] += gv;
                        sum_gx[ch] += gv * xhat[ch * n + k].f64();
                    }
                }
                self.accum(*gamma, |dg, _| {
                    for ch in 0..c {
                        dg[ch] += T::of(sum_gx[ch]);
                    }
                });
                self.accum(*beta, |db, _| {
                    for ch in 0..c {
                        db[ch] += T::of(sum_g[ch]);
                    }
                });
                let train = *train;
                self.accum(*x, |dx, nodes| {
                    let gam = nodes[gamma.0].value.data();
                    for ch in 0..c {
                        let scale = gam[ch].f64() * inv_std[ch].f64();
                        for k in 0..n {
                            let j = ch * n + k;
                            let d = if train {
                                scale / n as f64
                                    * (n as f64 * g[j].f64()
                                        - sum_g[ch]
                                        - xhat[j].f64() * sum_gx[ch])
                            } else {
                                scale * g[j].f64()
                            };
                            dx[j] += T::of(d);
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let x = *x;
                self.accum(x, |dx, nodes| {
                    let xd = nodes[x.0].value.data();
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                self.accum(*x, |dx, nodes| {
                    let y = nodes[i].value.data();
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::MaxPool { x, segments, argmax } => {
                let n = self.value(*x).shape()[1];
                let segments = *segments;
                self.accum(*x, |dx, _| {
                    for (o, &k) in argmax.iter().enumerate() {
                        dx[o / segments * n + k] += g[o];
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let seg = &g[offset..offset + len];
                    self.accum(p, |dp, _| {
                        dp.iter_mut().zip(seg).for_each(|(d, &s)| *d += s);
                    });
                    offset += len;
                }
            }
            Op::Tile(x) => {
                let len = self.value(*x).numel();
                self.accum(*x, |dx, _| {
                    for row in g.chunks_exact(len) {
                        dx.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                    }
                });
            }
            Op::BroadcastColumns(x, reps) => {
                let reps = *reps;
                self.accum(*x, |dx, _| {
                    for (d, row) in dx.iter_mut().zip(g.chunks_exact(reps)) {
                        *d += T::of(row.iter().map(|v| v.f64()).sum::<f64>());
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, |da, nodes| {
                    let bd = nodes[b.0].value.data();
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(bd) {
                        *d += gv * bv;
                    }
                });
                self.accum(b, |db, nodes| {
                    let ad = nodes[a.0].value.data();
                    for ((d, &gv), &av) in db.iter_mut().zip(g).zip(ad) {
                        *d += gv * av;
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accum(v, |dv, _| {
                        dv.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                    });
                }
            }
            Op::Scale(x, factor) => {
                let factor = *factor;
                self.accum(*x, |dx, _| {
                    dx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * factor);
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accum(*x, |dx, _| dx.iter_mut().for_each(|d| *d += g0));
            }
            Op::Reshape(x) => {
                self.accum(*x, |dx, _| {
                    dx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                });
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).rows_cols();
                self.accum(*x, |dx, _| {
                    for a in 0..r {
                        for b in 0..c {
                            dx[a * c + b] += g[b * r + a];
                        }
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let c = self.value(*x).rows_cols().1;
                self.accum(*x, |dx, _| {
                    for (k, &src) in index.iter().enumerate() {
                        let row = &g[k * c..(k + 1) * c];
                        dx[src * c..(src + 1) * c]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(d, &s)| *d += s);
                    }
                });
            }
            Op::ScalarFn { x, local } => {
                let g0 = g[0];
                self.accum(*x, |dx, _| {
                    dx.iter_mut().zip(local).for_each(|(d, &l)| *d += g0 * l);
                });
            }
        }
        self.nodes[i].op = op;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
