//! Layered differentiable toy generators with exact Jacobians.
//!
//! A generator is a stack of affine layers, each followed by `identity` or
//! `tanh`. The zoo covers linear maps, tanh MLPs with and without a
//! bottleneck, and "blocky" image generators whose left and right halves
//! are driven by separate blocks of the latent code.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::{dot, fmt_real, norm2, parse_reals, Matrix};
use crate::rng::{normal_vec, seeded, seeded_stream, SeededRng, Stream};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y = act(x)`.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Linear,
    Mlp,
    Blocky,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Linear => "linear",
            GeneratorKind::Mlp => "mlp",
            GeneratorKind::Blocky => "blocky",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GeneratorKind::Linear),
            "mlp" => Ok(GeneratorKind::Mlp),
            "blocky" => Ok(GeneratorKind::Blocky),
            _ => Err(Error::invalid(format!("unknown generator kind {s:?}"))),
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `x ↦ act(W·x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("layer bias".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v = self.activation.apply(*v + b);
        }
        y
    }

    /// `diag(act′) · W` given this layer's output.
    fn local_jacobian(&self, out: &[f64]) -> Matrix {
        let mut j = self.weight.clone();
        for (i, &y) in out.iter().enumerate() {
            let d = self.activation.slope_from_output(y);
            if d != 1.0 {
                for c in 0..j.cols() {
                    j[(i, c)] *= d;
                }
            }
        }
        j
    }
}

/// Latent code `z ∈ R^{d_z}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self(values))
    }

    /// Standard normal draw.
    pub fn sample(d_z: usize, seed: u64) -> Self {
        Self(normal_vec(d_z, &mut seeded_stream(seed, Stream::Latent)))
    }

    pub fn zeros(d_z: usize) -> Self {
        Self(vec![0.0; d_z])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `z + alpha · direction`.
    pub fn shifted(&self, direction: &[f64], alpha: f64) -> Result<Self> {
        if direction.len() != self.0.len() {
            return Err(Error::Shape(format!(
                "direction of length {} for latent of length {}",
                direction.len(),
                self.0.len()
            )));
        }
        Self::new(self.0.iter().zip(direction).map(|(z, d)| z + alpha * d).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|z| z * s).collect())
    }
}

/// Subset of output indices, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask(Vec<usize>);

impl RegionMask {
    pub fn new(indices: Vec<usize>, d_x: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("region mask is empty"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("region indices must be strictly increasing"));
        }
        if let Some(&last) = indices.last() {
            if last >= d_x {
                return Err(Error::invalid(format!("region index {last} out of range 0..{d_x}")));
            }
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut indices: Vec<usize>, d_x: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, d_x)
    }

    /// Pixels `x0 ≤ x < x1`, `y0 ≤ y < y1` of a row-major `grid × grid`
    /// image; index `y·grid + x`.
    pub fn rect(grid: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x1 > grid || y1 > grid {
            return Err(Error::invalid(format!(
                "rectangle {x0},{y0},{x1},{y1} exceeds a {grid}x{grid} grid"
            )));
        }
        let indices = (y0..y1)
            .flat_map(|y| (x0..x1).map(move |x| y * grid + x))
            .collect();
        Self::new(indices, grid * grid)
    }

    pub fn full(d_x: usize) -> Result<Self> {
        Self::new((0..d_x).collect(), d_x)
    }

    pub fn left_half(grid: usize) -> Result<Self> {
        Self::rect(grid, 0, 0, grid / 2, grid)
    }

    pub fn right_half(grid: usize) -> Result<Self> {
        Self::rect(grid, grid / 2, 0, grid, grid)
    }

    /// Every index of `0..d_x` not in this mask.
    pub fn complement(&self, d_x: usize) -> Result<Self> {
        let idx = (0..d_x).filter(|i| !self.contains(*i)).collect();
        Self::new(idx, d_x)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_disjoint(&self, other: &RegionMask) -> bool {
        self.0.iter().all(|&i| !other.contains(i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    kind: GeneratorKind,
    layers: Vec<Layer>,
    intrinsic_dim: usize,
}

impl Generator {
    pub fn new(kind: GeneratorKind, layers: Vec<Layer>, intrinsic_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("generator needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} emits {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        let narrowest = layers
            .iter()
            .map(|l| l.input_dim().min(l.output_dim()))
            .min()
            .unwrap_or(0);
        if intrinsic_dim > narrowest {
            return Err(Error::invalid(format!(
                "intrinsic_dim {intrinsic_dim} exceeds the narrowest layer width {narrowest}"
            )));
        }
        Ok(Self {
            kind,
            layers,
            intrinsic_dim,
        })
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn d_z(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn d_x(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    /// Side of the square image grid, when `d_x` is a perfect square.
    pub fn grid(&self) -> Option<usize> {
        let d_x = self.d_x();
        let g = (d_x as f64).sqrt().round() as usize;
        (g * g == d_x).then_some(g)
    }

    fn check_latent(&self, z: &LatentCode) -> Result<()> {
        if z.len() != self.d_z() {
            return Err(Error::Shape(format!(
                "latent of length {} for a generator with d_z = {}",
                z.len(),
                self.d_z()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &LatentCode) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        Ok(self.layers.iter().fold(z.values().to_vec(), |x, l| l.eval(&x)))
    }

    /// Output of every layer, starting with the input itself.
    fn activations(&self, z: &LatentCode) -> Vec<Vec<f64>> {
        let mut acts = vec![z.values().to_vec()];
        for l in &self.layers {
            let next = l.eval(acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    /// Exact `d_x × d_z` Jacobian by the chain rule.
    pub fn jacobian(&self, z: &LatentCode) -> Result<Matrix> {
        self.check_latent(z)?;
        let acts = self.activations(z);
        let mut j = self.layers[0].local_jacobian(&acts[1]);
        for (k, l) in self.layers.iter().enumerate().skip(1) {
            j = l.local_jacobian(&acts[k + 1]).matmul(&j);
        }
        Ok(j)
    }

    /// Jacobian of the remaining sub-network with respect to the input of
    /// every layer: entry `k` is `∂G/∂z_k` (`d_x × width_k`), so entry 0 is
    /// the full Jacobian and the last entry is the final layer's own.
    pub fn layer_jacobians(&self, z: &LatentCode) -> Result<Vec<Matrix>> {
        self.check_latent(z)?;
        let acts = self.activations(z);
        let n = self.layers.len();
        let mut out = Vec::with_capacity(n);
        let mut tail = self.layers[n - 1].local_jacobian(&acts[n]);
        out.push(tail.clone());
        for k in (0..n - 1).rev() {
            tail = tail.matmul(&self.layers[k].local_jacobian(&acts[k + 1]));
            out.push(tail.clone());
        }
        out.reverse();
        Ok(out)
    }

    /// Central differences, step `h = step·max(1, |z_k|)` per coordinate.
    pub fn jacobian_fd(&self, z: &LatentCode, step: f64) -> Result<Matrix> {
        self.check_latent(z)?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {step}")));
        }
        let mut j = Matrix::zeros(self.d_x(), self.d_z());
        let mut zp = z.values().to_vec();
        for k in 0..self.d_z() {
            let zk = zp[k];
            let h = step * zk.abs().max(1.0);
            zp[k] = zk + h;
            let plus = self.forward(&LatentCode(zp.clone()))?;
            zp[k] = zk - h;
            let minus = self.forward(&LatentCode(zp.clone()))?;
            zp[k] = zk;
            for i in 0..self.d_x() {
                j[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Text format: header `kind d_z d_x intrinsic_dim n_layers`, then per
    /// layer `rows cols activation`, the weight rows and one bias row.
    pub fn save(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {}\n",
            self.kind,
            self.d_z(),
            self.d_x(),
            self.intrinsic_dim,
            self.layers.len()
        );
        for l in &self.layers {
            s.push_str(&format!(
                "{} {} {}\n",
                l.weight.rows(),
                l.weight.cols(),
                l.activation.name()
            ));
            for i in 0..l.weight.rows() {
                push_row(&mut s, l.weight.row(i));
            }
            push_row(&mut s, &l.bias);
        }
        s
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (n, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing generator header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [kind, d_z, d_x, intrinsic, n_layers] = fields[..] else {
            return Err(Error::parse(
                n,
                "generator header must be `kind d_z d_x intrinsic_dim n_layers`",
            ));
        };
        let kind: GeneratorKind = kind.parse().map_err(|e: Error| Error::parse(n, e.to_string()))?;
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(n, format!("bad {what} {s:?}")))
        };
        let (d_z, d_x) = (num(d_z, "d_z")?, num(d_x, "d_x")?);
        let intrinsic = num(intrinsic, "intrinsic_dim")?;
        let n_layers = num(n_layers, "n_layers")?;

        let mut last_line = n;
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (n, lh) = lines
                .next()
                .ok_or_else(|| Error::parse(last_line + 1, format!("missing layer {k} header")))?;
            let parts: Vec<&str> = lh.split_whitespace().collect();
            let [rows, cols, act] = parts[..] else {
                return Err(Error::parse(n, format!("layer {k} header must be `rows cols activation`")));
            };
            let rows: usize = rows
                .parse()
                .map_err(|_| Error::parse(n, format!("bad row count {rows:?}")))?;
            let cols: usize = cols
                .parse()
                .map_err(|_| Error::parse(n, format!("bad column count {cols:?}")))?;
            let activation: Activation = act.parse().map_err(|e: Error| Error::parse(n, e.to_string()))?;
            last_line = n;
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let (n, line) = lines.next().ok_or_else(|| {
                    Error::parse(last_line + 1, format!("missing weight row {r} of layer {k}"))
                })?;
                let vals = parse_reals(line, n)?;
                if vals.len() != cols {
                    return Err(Error::parse(
                        n,
                        format!("weight row {r} of layer {k}: expected {cols} values, found {}", vals.len()),
                    ));
                }
                data.extend(vals);
                last_line = n;
            }
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(last_line + 1, format!("missing bias row of layer {k}")))?;
            let bias = parse_reals(line, n)?;
            if bias.len() != rows {
                return Err(Error::parse(
                    n,
                    format!("bias row of layer {k}: expected {rows} values, found {}", bias.len()),
                ));
            }
            last_line = n;
            let weight = Matrix::from_vec(rows, cols, data)?;
            layers.push(Layer::new(weight, bias, activation)?);
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::parse(n, "trailing content after last layer"));
        }
        let g = Generator::new(kind, layers, intrinsic).map_err(|e| Error::parse(last_line, e.to_string()))?;
        if g.d_z() != d_z || g.d_x() != d_x {
            return Err(Error::parse(
                1,
                format!(
                    "header declares {d_z}->{d_x} but layers map {}->{}",
                    g.d_z(),
                    g.d_x()
                ),
            ));
        }
        Ok(g)
    }

    /// `in->out activation` per layer, for summaries.
    pub fn layer_shapes(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|l| format!("{}->{} {}", l.input_dim(), l.output_dim(), l.activation.name()))
            .collect()
    }
}

fn push_row(s: &mut String, row: &[f64]) {
    let parts: Vec<String> = row.iter().map(|&x| fmt_real(x)).collect();
    s.push_str(&parts.join(" "));
    s.push('\n');
}

/// Single linear layer with standard normal weights scaled by `1/√d_z` and
/// zero bias.
pub fn make_linear(d_z: usize, d_x: usize, seed: u64) -> Result<Generator> {
    check_positive(&[d_z, d_x])?;
    let mut rng = seeded(seed);
    let w = scaled_normal(d_x, d_z, 1.0 / (d_z as f64).sqrt(), &mut rng);
    let layer = Layer::new(w, vec![0.0; d_x], Activation::Identity)?;
    Generator::new(GeneratorKind::Linear, vec![layer], d_z.min(d_x))
}

/// `G(z) = z` padded or truncated to `d_x` outputs (identity weight block).
pub fn make_linear_identity(d_z: usize, d_x: usize) -> Result<Generator> {
    check_positive(&[d_z, d_x])?;
    let w = Matrix::from_fn(d_x, d_z, |i, j| if i == j { 1.0 } else { 0.0 });
    let layer = Layer::new(w, vec![0.0; d_x], Activation::Identity)?;
    Generator::new(GeneratorKind::Linear, vec![layer], d_z.min(d_x))
}

/// Chain of linear layers through the given widths (`[d_z, …, d_x]`), zero
/// biases.
pub fn make_linear_chain(widths: &[usize], seed: u64) -> Result<Generator> {
    let layers = random_layers(widths, seed, |_| Activation::Identity, 0.0)?;
    Generator::new(GeneratorKind::Linear, layers, narrowest(widths))
}

/// Tanh MLP through `widths = [d_z, h₁, …, d_x]`; hidden layers use tanh,
/// the output layer is affine. Weights are `N(0, 1/fan_in)`, biases
/// `N(0, 0.01)`. The recorded intrinsic dimension is the narrowest width.
pub fn make_mlp(widths: &[usize], seed: u64) -> Result<Generator> {
    let last = widths.len().saturating_sub(2);
    let layers = random_layers(
        widths,
        seed,
        |k| if k == last { Activation::Identity } else { Activation::Tanh },
        0.1,
    )?;
    Generator::new(GeneratorKind::Mlp, layers, narrowest(widths))
}

fn narrowest(widths: &[usize]) -> usize {
    widths.iter().copied().min().unwrap_or(0)
}

fn check_positive(dims: &[usize]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("dimensions must be positive: {dims:?}")));
    }
    Ok(())
}

fn random_layers(
    widths: &[usize],
    seed: u64,
    act: impl Fn(usize) -> Activation,
    bias_scale: f64,
) -> Result<Vec<Layer>> {
    if widths.len() < 2 {
        return Err(Error::invalid("need at least input and output widths"));
    }
    check_positive(widths)?;
    let mut rng = seeded(seed);
    widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let weight = scaled_normal(w[1], w[0], 1.0 / (w[0] as f64).sqrt(), &mut rng);
            let bias = normal_vec(w[1], &mut rng).into_iter().map(|b| b * bias_scale).collect();
            Layer::new(weight, bias, act(k))
        })
        .collect()
}

fn scaled_normal(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, normal_vec(rows * cols, rng).into_iter().map(|x| x * scale).collect())
        .expect("finite")
}

/// Hidden unit counts of a blocky generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockyUnits {
    /// Driven by latent block A, drawn only in the left half.
    pub local_a: usize,
    /// Driven by latent block B, drawn in both halves.
    pub global: usize,
    /// Driven by latent block B, drawn only in the right half.
    pub local_b: usize,
}

impl Default for BlockyUnits {
    fn default() -> Self {
        Self {
            local_a: 2,
            global: 1,
            local_b: 1,
        }
    }
}

impl BlockyUnits {
    pub fn total(&self) -> usize {
        self.local_a + self.global + self.local_b
    }
}

/// Blocky image generator with the default unit counts.
pub fn make_blocky(d_z: usize, grid: usize, block_split: usize, coupling: f64, seed: u64) -> Result<Generator> {
    make_blocky_with(d_z, grid, block_split, coupling, seed, BlockyUnits::default())
}

/// `r` orthonormal rows over `n` coordinates whose span gives every
/// coordinate the same leverage `r / n`.
///
/// The span is a constant row (odd `r`) plus cosine/sine pairs at distinct
/// frequencies; coordinates are shuffled and the rows mixed by a random
/// rotation, neither of which changes the span's leverage profile.
fn flat_rows(r: usize, n: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let max_freq = (n - 1) / 2;
    if r > 1 + 2 * max_freq {
        return Err(Error::invalid(format!(
            "{r} units cannot share a flat span over a block of {n} latents"
        )));
    }
    let mut freqs: Vec<usize> = (1..=max_freq).collect();
    freqs.shuffle(rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);

    let nf = n as f64;
    let mut frame = Matrix::zeros(r, n);
    let mut row = 0;
    if r % 2 == 1 {
        for i in 0..n {
            frame[(0, i)] = 1.0 / nf.sqrt();
        }
        row = 1;
    }
    for &k in freqs.iter().take(r / 2) {
        for (slot, &i) in perm.iter().enumerate() {
            let t = 2.0 * PI * (k * slot) as f64 / nf;
            frame[(row, i)] = (2.0 / nf).sqrt() * t.cos();
            frame[(row + 1, i)] = (2.0 / nf).sqrt() * t.sin();
        }
        row += 2;
    }
    Ok(random_rotation(r, rng).matmul(&frame))
}

/// Haar-distributed orthogonal matrix via Gram-Schmidt on Gaussian columns.
fn random_rotation(r: usize, rng: &mut SeededRng) -> Matrix {
    loop {
        let g = crate::rng::normal_matrix(r, r, rng);
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(r);
        for c in 0..r {
            let mut v = g.col(c);
            for u in &q {
                let d = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
            let nv = norm2(&v);
            if nv < 1e-8 {
                break;
            }
            q.push(v.into_iter().map(|x| x / nv).collect());
        }
        if q.len() == r {
            return Matrix::from_fn(r, r, |i, j| q[j][i]);
        }
    }
}

/// Two-layer `d_z → units (tanh) → grid²` image generator.
///
/// Latent block A is `[0, block_split)`, block B is `[block_split, d_z)`.
/// Local-A units read block A and paint the left half (`x < grid/2`);
/// local-B units read block B and paint the right half; global units read
/// block B and paint both halves. The units reading one block have
/// orthonormal weight rows with a flat leverage profile over that block.
/// Each unit additionally reads the other block through `coupling · γ / √n`
/// with `γ` uniform on `[-1, 1]` and `n` the other block's size. With
/// `coupling = 0` the right half does not depend on block A at all; for any
/// coupling it depends on `z` only through the rows of the units that paint
/// it.
///
/// Spatial patterns are smooth: the first local unit of each side has a
/// strong positive footprint, the rest are low-frequency cosines.
pub fn make_blocky_with(
    d_z: usize,
    grid: usize,
    block_split: usize,
    coupling: f64,
    seed: u64,
    units: BlockyUnits,
) -> Result<Generator> {
    if block_split == 0 || block_split >= d_z {
        return Err(Error::invalid(format!(
            "block_split must lie in 1..{d_z}, got {block_split}"
        )));
    }
    if grid < 2 {
        return Err(Error::invalid(format!("grid must be at least 2, got {grid}")));
    }
    if !(0.0..=1.0).contains(&coupling) {
        return Err(Error::invalid(format!("coupling must lie in [0, 1], got {coupling}")));
    }
    if units.local_a == 0 || units.local_b == 0 {
        return Err(Error::invalid("each half needs at least one local unit"));
    }
    let h = units.total();
    let d_x = grid * grid;
    let mut rng = seeded(seed);

    let size_a = block_split;
    let size_b = d_z - block_split;
    let rows_a = flat_rows(units.local_a, size_a, &mut rng)?;
    let rows_b = flat_rows(units.global + units.local_b, size_b, &mut rng)?;
    let mut w1 = Matrix::zeros(h, d_z);
    for u in 0..h {
        let (own, own_start, other_start, other_len) = if u < units.local_a {
            (rows_a.row(u), 0, size_a, size_b)
        } else {
            (rows_b.row(u - units.local_a), size_a, 0, size_a)
        };
        for (k, &w) in own.iter().enumerate() {
            w1[(u, own_start + k)] = w;
        }
        let scale = coupling / (other_len as f64).sqrt();
        for k in 0..other_len {
            let gamma: f64 = rng.random_range(-1.0..1.0);
            w1[(u, other_start + k)] = scale * gamma;
        }
    }
    let b1: Vec<f64> = normal_vec(h, &mut rng).into_iter().map(|b| 0.1 * b).collect();

    let half = grid / 2;
    let mut w2 = Matrix::zeros(d_x, h);
    let pattern = |strong: bool, rng: &mut SeededRng| -> Vec<f64> {
        let fx: f64 = rng.random_range(0.5..2.0);
        let fy: f64 = rng.random_range(0.5..2.0);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        (0..d_x)
            .map(|p| {
                let (x, y) = ((p % grid) as f64 / grid as f64, (p / grid) as f64 / grid as f64);
                let wave = (PI * (fx * x + fy * y) + phase).cos();
                if strong {
                    0.8 + 0.2 * wave
                } else {
                    0.4 * wave
                }
            })
            .collect()
    };
    for u in 0..h {
        let is_local_a = u < units.local_a;
        let is_global = (units.local_a..units.local_a + units.global).contains(&u);
        let strong = u == 0 || u == units.local_a + units.global;
        let pat = pattern(strong && !is_global, &mut rng);
        for p in 0..d_x {
            let left = p % grid < half;
            w2[(p, u)] = if is_global {
                0.3 + pat[p]
            } else if is_local_a == left {
                pat[p]
            } else {
                0.0
            };
        }
    }
    let base = pattern(false, &mut rng);
    let b2: Vec<f64> = base.iter().map(|v| 0.5 + 0.25 * v).collect();

    let layers = vec![
        Layer::new(w1, b1, Activation::Tanh)?,
        Layer::new(w2, b2, Activation::Identity)?,
    ];
    Generator::new(GeneratorKind::Blocky, layers, h)
}

/// Default blocky sizes.
pub const BLOCKY_DZ: usize = 32;
pub const BLOCKY_GRID: usize = 16;
pub const BLOCKY_SPLIT: usize = 16;
/// Wide variant with room for a λ = 1/n sweep over n ∈ {20, …, 80}.
pub const BLOCKY_WIDE_DZ: usize = 128;

/// The verification zoo: named generators, all seeded from `seed`.
pub fn zoo(seed: u64) -> Result<Vec<(String, Generator)>> {
    Ok(vec![
        ("linear_square".into(), make_linear(8, 8, seed)?),
        ("linear_bottleneck".into(), make_linear_chain(&[32, 8, 256], seed.wrapping_add(1))?),
        ("mlp_bottleneck".into(), make_mlp(&[32, 8, 256], seed.wrapping_add(2))?),
        ("mlp_deep".into(), make_mlp(&[32, 16, 8, 256], seed.wrapping_add(3))?),
        ("mlp_square".into(), make_mlp(&[32, 32, 256], seed.wrapping_add(4))?),
        (
            "blocky_c0".into(),
            make_blocky(BLOCKY_DZ, BLOCKY_GRID, BLOCKY_SPLIT, 0.0, seed.wrapping_add(5))?,
        ),
        (
            "blocky_c005".into(),
            make_blocky(BLOCKY_DZ, BLOCKY_GRID, BLOCKY_SPLIT, 0.05, seed.wrapping_add(6))?,
        ),
        (
            "blocky_wide".into(),
            make_blocky(BLOCKY_WIDE_DZ, BLOCKY_GRID, BLOCKY_WIDE_DZ / 2, 0.0, seed.wrapping_add(7))?,
        ),
    ])
}
