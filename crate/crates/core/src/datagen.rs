//! Deterministic, seedable data generation.
//!
//! All generators are pure functions of (seed, parameters): the stream
//! cipher behind [`Rng`] is counter-based, and substreams are derived by
//! hashing a label into the stream id, so adding a generator call in one
//! place never perturbs the draws of another.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{DeepLinearNet, PopulationStats};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeded, splittable random generator.
///
/// Wraps a counter-based stream cipher; `substream` derives an
/// independent generator from a label without consuming state.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    /// Independent generator for the given label. Deterministic: the same
    /// (seed, parent stream, label) always yields the same substream.
    pub fn substream(&self, label: u64) -> Rng {
        Rng::with_stream(self.seed, splitmix(self.stream ^ splitmix(label)))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std_dev: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std_dev * self.standard_normal())
    }

    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A matrix with orthonormal columns (rows x cols, rows >= cols), sampled
/// from the rotation-invariant distribution via Gram-Schmidt on a
/// Gaussian draw.
pub fn random_orthonormal_columns(rng: &mut Rng, rows: usize, cols: usize) -> Result<Matrix> {
    if cols > rows {
        return Err(Error::invalid(
            "cannot build more orthonormal columns than the ambient dimension",
        ));
    }
    let mut q = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let mut col: Vec<f64> = (0..rows).map(|_| rng.standard_normal()).collect();
        // Two re-orthogonalization passes keep the set orthonormal to
        // machine precision.
        for _ in 0..2 {
            for k in 0..j {
                let mut dot = 0.0;
                for i in 0..rows {
                    dot += q.get(i, k) * col[i];
                }
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= dot * q.get(i, k);
                }
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::numerical("degenerate draw in orthonormalization"));
        }
        for (i, c) in col.iter().enumerate() {
            q.set(i, j, c / norm);
        }
    }
    Ok(q)
}

/// The exact population statistics of a designed teacher:
/// `Sigma_xx = I`, `Sigma_yx = Q diag(spectrum) R^T` with random
/// orthonormal factors.
///
/// Uses a fixed substream of `rng`, so population-only consumers and
/// [`gaussian_regression`] agree on the teacher for a given seed.
pub fn designed_teacher(
    rng: &Rng,
    d_in: usize,
    d_out: usize,
    teacher_spectrum: &[f64],
) -> Result<PopulationStats> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    if teacher_spectrum.len() > d_in.min(d_out) {
        return Err(Error::invalid(
            "teacher spectrum longer than min(d_in, d_out)",
        ));
    }
    let rank = teacher_spectrum.len();
    let mut teacher_rng = rng.substream(1);
    let q = random_orthonormal_columns(&mut teacher_rng, d_out, rank)?;
    let r = random_orthonormal_columns(&mut teacher_rng, d_in, rank)?;
    // A = Q diag(s) R^T
    let mut scaled = q.clone();
    for k in 0..rank {
        for i in 0..d_out {
            let v = scaled.get(i, k) * teacher_spectrum[k];
            scaled.set(i, k, v);
        }
    }
    let teacher = scaled.matmul_transb(&r);
    PopulationStats::new(Matrix::identity(d_in), teacher)
}

/// Gaussian linear-regression data with a designed teacher spectrum.
///
/// Inputs are standard normal; the teacher is `A = Q diag(spectrum) R^T`
/// with random orthonormal factors; targets are `y = A x + noise * eps`.
/// Returns the samples (rows) together with the exact population
/// statistics `Sigma_xx = I`, `Sigma_yx = A`.
pub fn gaussian_regression(
    rng: &mut Rng,
    n: usize,
    d_in: usize,
    d_out: usize,
    teacher_spectrum: &[f64],
    noise: f64,
) -> Result<(Matrix, Matrix, PopulationStats)> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if noise < 0.0 {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let stats = designed_teacher(rng, d_in, d_out, teacher_spectrum)?;
    let teacher = stats.sigma_yx.clone();

    let mut sample_rng = rng.substream(2);
    let xs = sample_rng.normal_matrix(n, d_in, 1.0);
    let mut ys = xs.matmul_transb(&teacher);
    if noise > 0.0 {
        let mut noise_rng = rng.substream(3);
        for v in ys.data_mut() {
            *v += noise * noise_rng.standard_normal();
        }
    }
    Ok((xs, ys, stats))
}

/// How the 2-layer network weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// i.i.d. Gaussian entries with standard deviation `scale`.
    Gaussian,
    /// Gaussian, then a polar correction so V^T V = U U^T exactly.
    Balanced,
    /// Factors built from the teacher's singular vectors so the product
    /// map starts at `scale` in every teacher mode: balanced, aligned, and
    /// with per-mode initial value exactly `scale`.
    Aligned,
}

/// Small Gaussian initialization of the 2-layer network, optionally
/// balanced exactly.
pub fn balanced_small_init(
    rng: &mut Rng,
    d_in: usize,
    hidden: usize,
    d_out: usize,
    scale: f64,
    exact_balance: bool,
) -> Result<DeepLinearNet> {
    if !(scale > 0.0) {
        return Err(Error::invalid("init scale must be positive"));
    }
    let mut u_rng = rng.substream(10);
    let mut v_rng = rng.substream(11);
    let u = u_rng.normal_matrix(hidden, d_in, scale);
    let v = v_rng.normal_matrix(d_out, hidden, scale);
    if !exact_balance {
        return DeepLinearNet::new(u, v);
    }

    // Rebuild both factors from the SVD of the product map:
    // W = P diag(s) Q^T gives U = sqrt(s) Z Q^T and V = P sqrt(s) Z^T for
    // any orthonormal Z, which is balanced by construction.
    let net = DeepLinearNet::new(u, v)?;
    let w = net.product_map();
    let svd = crate::linalg::svd_compact(&w, 0.0)?;
    let rank = svd.rank();
    if rank == 0 {
        return Ok(net);
    }
    let mut z_rng = rng.substream(12);
    let z = random_orthonormal_columns(&mut z_rng, hidden, rank)?;
    let mut u_bal = Matrix::zeros(hidden, d_in);
    let mut v_bal = Matrix::zeros(d_out, hidden);
    for k in 0..rank {
        let root = svd.s[k].sqrt();
        for i in 0..hidden {
            for j in 0..d_in {
                let v = u_bal.get(i, j) + root * z.get(i, k) * svd.vt.get(k, j);
                u_bal.set(i, j, v);
            }
        }
        for i in 0..d_out {
            for j in 0..hidden {
                let v2 = v_bal.get(i, j) + svd.u.get(i, k) * root * z.get(j, k);
                v_bal.set(i, j, v2);
            }
        }
    }
    DeepLinearNet::new(u_bal, v_bal)
}

/// Balanced initialization aligned with the teacher's singular vectors:
/// every teacher mode starts with product singular value exactly `scale`.
pub fn aligned_small_init(
    rng: &mut Rng,
    hidden: usize,
    stats: &PopulationStats,
    scale: f64,
) -> Result<DeepLinearNet> {
    if !(scale > 0.0) {
        return Err(Error::invalid("init scale must be positive"));
    }
    let svd = crate::linalg::svd_compact(&stats.sigma_yx, 0.0)?;
    let rank = svd.rank();
    if rank > hidden {
        return Err(Error::invalid("hidden width below teacher rank"));
    }
    let d_in = stats.sigma_yx.cols();
    let d_out = stats.sigma_yx.rows();
    let mut z_rng = rng.substream(13);
    let z = random_orthonormal_columns(&mut z_rng, hidden, rank)?;
    let root = scale.sqrt();
    let mut u = Matrix::zeros(hidden, d_in);
    let mut v = Matrix::zeros(d_out, hidden);
    for k in 0..rank {
        for i in 0..hidden {
            for j in 0..d_in {
                let val = u.get(i, j) + root * z.get(i, k) * svd.vt.get(k, j);
                u.set(i, j, val);
            }
        }
        for i in 0..d_out {
            for j in 0..hidden {
                let val = v.get(i, j) + root * svd.u.get(i, k) * z.get(j, k);
                v.set(i, j, val);
            }
        }
    }
    DeepLinearNet::new(u, v)
}

/// One routing sample: input from source `in_src`, target for source
/// `out_src`, carrying the task number it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSample {
    pub in_src: usize,
    pub out_src: usize,
    pub number: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A batch of routing samples, one per allowed (source, shift) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingBatch {
    pub sources: usize,
    pub shifts: usize,
    pub samples: Vec<RoutingSample>,
}

impl RoutingBatch {
    /// Every sample's output source must be a cyclic shift of its input
    /// source by less than `shifts`.
    pub fn check_gating(&self) -> Result<()> {
        for s in &self.samples {
            let shift = (s.out_src + self.sources - s.in_src) % self.sources;
            if shift >= self.shifts {
                return Err(Error::invalid(format!(
                    "pair ({}, {}) outside the allowed shift window",
                    s.in_src, s.out_src
                )));
            }
        }
        Ok(())
    }
}

/// Per-source encodings: `encodings[j]` holds N orthonormal columns, one
/// per task number, in the input dimension.
pub fn make_source_encodings(rng: &mut Rng, sources: usize, numbers: usize, dim: usize) -> Result<Vec<Matrix>> {
    if numbers > dim {
        return Err(Error::invalid("more numbers than input dimensions"));
    }
    (0..sources)
        .map(|j| {
            let mut sub = rng.substream(100 + j as u64);
            random_orthonormal_columns(&mut sub, dim, numbers)
        })
        .collect()
}

/// Sample one training batch for the routing task.
///
/// Loops input sources j = 0..m and shifts s = 0..k; each allowed pair
/// (j, (j+s) mod m) contributes exactly one sample with a uniformly drawn
/// number index, giving m*k samples in a fixed order.
pub fn routing_sample_batch(
    rng: &mut Rng,
    sources: usize,
    shifts: usize,
    numbers: usize,
    encodings: &[Matrix],
    targets: &[Vec<f64>],
) -> Result<RoutingBatch> {
    if sources == 0 || shifts == 0 || shifts > sources {
        return Err(Error::invalid("need 0 < shifts <= sources"));
    }
    if encodings.len() != sources {
        return Err(Error::invalid("one encoding set per source required"));
    }
    if targets.len() != numbers {
        return Err(Error::invalid("one target vector per number required"));
    }
    for enc in encodings {
        if enc.cols() != numbers {
            return Err(Error::invalid("encoding set must have one column per number"));
        }
        check_orthonormal_columns(enc)?;
    }

    let mut samples = Vec::with_capacity(sources * shifts);
    for j in 0..sources {
        for s in 0..shifts {
            let o = (j + s) % sources;
            let i = rng.uniform_index(numbers);
            let x: Vec<f64> = (0..encodings[j].rows())
                .map(|row| encodings[j].get(row, i))
                .collect();
            samples.push(RoutingSample {
                in_src: j,
                out_src: o,
                number: i,
                x,
                y: targets[i].clone(),
            });
        }
    }
    let batch = RoutingBatch {
        sources,
        shifts,
        samples,
    };
    batch.check_gating()?;
    Ok(batch)
}

fn check_orthonormal_columns(m: &Matrix) -> Result<()> {
    for a in 0..m.cols() {
        for b in a..m.cols() {
            let mut dot = 0.0;
            for i in 0..m.rows() {
                dot += m.get(i, a) * m.get(i, b);
            }
            let expect = if a == b { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-9 {
                return Err(Error::invalid("encodings are not orthonormal"));
            }
        }
    }
    Ok(())
}

/// Specification of the spurious-feature dataset.
///
/// The inputs carry two signals: a "core" latent read out through the
/// first d_in - 1 coordinates, and a "spurious" latent exposed solely on
/// the last coordinate with amplitude `spurious_strength`. Both latents
/// contribute to the targets through orthogonal output directions, so the
/// cross-moment Sigma_yx has singular values
/// {core_strength, spurious_strength}. Zeroing the last input coordinate
/// removes exactly the spurious route.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpuriousSpec {
    pub core_strength: f64,
    pub spurious_strength: f64,
    pub noise_level: f64,
    pub d_in: usize,
    pub d_out: usize,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        SpuriousSpec {
            core_strength: 1.0,
            spurious_strength: 0.5,
            noise_level: 0.0,
            d_in: 8,
            d_out: 4,
        }
    }
}

impl SpuriousSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.core_strength > 0.0) || self.spurious_strength < 0.0 {
            return Err(Error::invalid(
                "core strength must be positive and spurious strength non-negative",
            ));
        }
        if self.noise_level < 0.0 {
            return Err(Error::invalid("noise level must be non-negative"));
        }
        if self.d_in < 2 || self.d_out < 2 {
            return Err(Error::invalid("need at least 2 input and output dims"));
        }
        Ok(())
    }
}

/// The spurious-feature dataset: a training set plus paired evaluation
/// sets with and without the spurious coordinate.
#[derive(Debug, Clone)]
pub struct SpuriousData {
    pub train_xs: Matrix,
    pub train_ys: Matrix,
    pub eval_with_xs: Matrix,
    pub eval_without_xs: Matrix,
    pub eval_ys: Matrix,
    /// Exact cross moment E[y x^T] of the generative process.
    pub sigma_yx: Matrix,
    /// Unit input direction carrying the core latent (length d_in - 1).
    pub core_direction: Vec<f64>,
    /// Unit output direction of the core content.
    pub output_core: Vec<f64>,
    /// Unit output direction of the shortcut content.
    pub output_spurious: Vec<f64>,
}

/// Generate the spurious-feature dataset.
///
/// Core latent u and spurious latent h are independent standard normals.
/// Inputs: coordinates 0..d_in-1 are white Gaussians carrying u through a
/// fixed unit direction; the last coordinate is `spurious_strength * h`.
/// Targets: `y = core_strength * q_core * u + q_spur * h + noise * eps`.
/// The without-spurious evaluation set zeroes the last input coordinate
/// and keeps the labels; at spurious_strength 0 the two evaluation input
/// sets are identical.
pub fn spurious_dataset(rng: &mut Rng, spec: &SpuriousSpec, n: usize, n_eval: usize) -> Result<SpuriousData> {
    spec.validate()?;
    if n == 0 || n_eval == 0 {
        return Err(Error::invalid("sample counts must be positive"));
    }
    let d_core = spec.d_in - 1;
    let mut dir_rng = rng.substream(20);
    let r_core = random_orthonormal_columns(&mut dir_rng, d_core, 1)?;
    let q = random_orthonormal_columns(&mut dir_rng, spec.d_out, 2)?;

    let generate = |rng: &mut Rng, count: usize| -> (Matrix, Matrix, Matrix) {
        let mut xs = Matrix::zeros(count, spec.d_in);
        let mut ys = Matrix::zeros(count, spec.d_out);
        for i in 0..count {
            // White core coordinates; u is their projection on r_core.
            let mut u = 0.0;
            for j in 0..d_core {
                let z = rng.standard_normal();
                xs.set(i, j, z);
                u += z * r_core.get(j, 0);
            }
            let h = rng.standard_normal();
            xs.set(i, d_core, spec.spurious_strength * h);
            for a in 0..spec.d_out {
                let mut y = spec.core_strength * q.get(a, 0) * u + q.get(a, 1) * h;
                if spec.noise_level > 0.0 {
                    y += spec.noise_level * rng.standard_normal();
                }
                ys.set(i, a, y);
            }
        }
        let mut without = xs.clone();
        for i in 0..count {
            without.set(i, d_core, 0.0);
        }
        (xs, without, ys)
    };

    let mut train_rng = rng.substream(21);
    let (train_xs, _, train_ys) = generate(&mut train_rng, n);
    let mut eval_rng = rng.substream(22);
    let (eval_with_xs, eval_without_xs, eval_ys) = generate(&mut eval_rng, n_eval);

    // E[y x^T]: core block = core_strength * q0 r_core^T, last column =
    // spurious_strength * q1.
    let mut sigma_yx = Matrix::zeros(spec.d_out, spec.d_in);
    for a in 0..spec.d_out {
        for j in 0..d_core {
            sigma_yx.set(a, j, spec.core_strength * q.get(a, 0) * r_core.get(j, 0));
        }
        sigma_yx.set(a, d_core, spec.spurious_strength * q.get(a, 1));
    }

    Ok(SpuriousData {
        train_xs,
        train_ys,
        eval_with_xs,
        eval_without_xs,
        eval_ys,
        sigma_yx,
        core_direction: (0..d_core).map(|j| r_core.get(j, 0)).collect(),
        output_core: (0..spec.d_out).map(|a| q.get(a, 0)).collect(),
        output_spurious: (0..spec.d_out).map(|a| q.get(a, 1)).collect(),
    })
}

/// Export a regression dataset as CSV: header row, one sample per line.
pub fn regression_to_csv(xs: &Matrix, ys: &Matrix) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..xs.cols())
        .map(|j| format!("x{j}"))
        .chain((0..ys.cols()).map(|j| format!("y{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..xs.rows() {
        let row: Vec<String> = xs
            .row(i)
            .iter()
            .chain(ys.row(i).iter())
            .map(|v| format!("{v}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Export a routing batch as CSV with the source pair in the leading
/// columns.
pub fn routing_batch_to_csv(batch: &RoutingBatch) -> String {
    let mut out = String::new();
    if let Some(first) = batch.samples.first() {
        let header: Vec<String> = ["j".to_string(), "o".to_string()]
            .into_iter()
            .chain((0..first.x.len()).map(|j| format!("x{j}")))
            .chain((0..first.y.len()).map(|j| format!("y{j}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
    }
    for s in &batch.samples {
        let row: Vec<String> = [s.in_src.to_string(), s.out_src.to_string()]
            .into_iter()
            .chain(s.x.iter().map(|v| format!("{v}")))
            .chain(s.y.iter().map(|v| format!("{v}")))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, svd_compact};

    #[test]
    fn substreams_are_independent_of_call_order() {
        let root = Rng::new(7);
        let mut a1 = root.substream(1);
        let mut b1 = root.substream(2);
        let draw_a1 = a1.standard_normal();
        let draw_b1 = b1.standard_normal();
        // Recreate in the opposite order.
        let root2 = Rng::new(7);
        let mut b2 = root2.substream(2);
        let mut a2 = root2.substream(1);
        assert_eq!(draw_b1, b2.standard_normal());
        assert_eq!(draw_a1, a2.standard_normal());
    }

    #[test]
    fn same_seed_same_stream() {
        let mut r1 = Rng::new(123);
        let mut r2 = Rng::new(123);
        for _ in 0..32 {
            assert_eq!(r1.standard_normal(), r2.standard_normal());
        }
    }

    #[test]
    fn regression_teacher_spectrum_is_respected() {
        let mut rng = Rng::new(5);
        let (_, _, stats) = gaussian_regression(&mut rng, 4, 6, 3, &[1.0], 0.0).unwrap();
        let svd = svd_compact(&stats.sigma_yx, 0.0).unwrap();
        assert_eq!(svd.rank(), 1);
        assert!((svd.s[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noiseless_samples_match_the_teacher_exactly() {
        let mut rng = Rng::new(11);
        let (xs, ys, stats) = gaussian_regression(&mut rng, 16, 4, 3, &[2.0, 1.0], 0.0).unwrap();
        let expect = xs.matmul_transb(&stats.sigma_yx);
        for (a, b) in ys.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn regression_generation_is_deterministic() {
        let make = || {
            let mut rng = Rng::new(99);
            gaussian_regression(&mut rng, 8, 3, 2, &[2.0, 1.0], 0.1).unwrap()
        };
        let (x1, y1, _) = make();
        let (x2, y2, _) = make();
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn gaussian_init_has_the_right_scale() {
        // ||U||_F^2 concentrates around scale^2 * H * d_in.
        let mut rng = Rng::new(3);
        let net = balanced_small_init(&mut rng, 16, 64, 16, 0.01, false).unwrap();
        let expect = 0.01 * (64.0_f64 * 16.0).sqrt();
        let got = frobenius_norm(&net.u);
        // Stddev of the norm is about scale / sqrt(2), use 4 sigma.
        assert!(
            (got - expect).abs() < 4.0 * 0.01,
            "Frobenius norm {got} too far from {expect}"
        );
    }

    #[test]
    fn exact_balance_flag_balances_to_machine_precision() {
        let mut rng = Rng::new(4);
        let net = balanced_small_init(&mut rng, 2, 32, 2, 0.01, true).unwrap();
        assert!(net.balancedness_gap() <= 1e-12);
    }

    #[test]
    fn exact_balance_preserves_the_product_map() {
        let mut rng1 = Rng::new(4);
        let plain = balanced_small_init(&mut rng1, 2, 32, 2, 0.01, false).unwrap();
        let mut rng2 = Rng::new(4);
        let balanced = balanced_small_init(&mut rng2, 2, 32, 2, 0.01, true).unwrap();
        let diff = frobenius_norm(&plain.product_map().sub(&balanced.product_map()));
        assert!(diff < 1e-12, "balancing changed the product map by {diff}");
    }

    #[test]
    fn init_is_bitwise_deterministic() {
        let mut r1 = Rng::new(21);
        let mut r2 = Rng::new(21);
        let n1 = balanced_small_init(&mut r1, 3, 10, 2, 0.01, false).unwrap();
        let n2 = balanced_small_init(&mut r2, 3, 10, 2, 0.01, false).unwrap();
        assert_eq!(n1.u, n2.u);
        assert_eq!(n1.v, n2.v);
    }

    #[test]
    fn aligned_init_starts_every_mode_at_scale() {
        let mut rng = Rng::new(8);
        let (_, _, stats) = gaussian_regression(&mut rng, 4, 2, 2, &[2.0, 1.0], 0.0).unwrap();
        let net = aligned_small_init(&mut rng, 16, &stats, 1e-4).unwrap();
        assert!(net.balancedness_gap() < 1e-12);
        let svd = svd_compact(&net.product_map(), 0.0).unwrap();
        assert_eq!(svd.rank(), 2);
        for s in &svd.s {
            assert!((s - 1e-4).abs() < 1e-16, "mode started at {s}");
        }
    }

    #[test]
    fn encodings_are_orthonormal_and_source_specific() {
        let mut rng = Rng::new(13);
        let encodings = make_source_encodings(&mut rng, 7, 4, 4).unwrap();
        for enc in &encodings {
            check_orthonormal_columns(enc).unwrap();
        }
        // Different sources draw different bases (equality would need a
        // measure-zero event).
        let mut max_alignment: f64 = 0.0;
        for i in 0..4 {
            let mut dot = 0.0;
            for r in 0..4 {
                dot += encodings[0].get(r, i) * encodings[1].get(r, i);
            }
            max_alignment = max_alignment.max(dot.abs());
        }
        assert!(max_alignment < 1.0 - 1e-6);
    }

    #[test]
    fn full_rank_encodings_span_the_space() {
        let mut rng = Rng::new(14);
        let encodings = make_source_encodings(&mut rng, 2, 4, 4).unwrap();
        for enc in &encodings {
            let svd = svd_compact(enc, 0.0).unwrap();
            assert_eq!(svd.rank(), 4);
        }
    }

    #[test]
    fn too_many_numbers_rejected() {
        let mut rng = Rng::new(15);
        assert!(make_source_encodings(&mut rng, 2, 5, 4).is_err());
    }

    #[test]
    fn batch_covers_every_allowed_pair_once() {
        let mut rng = Rng::new(31);
        let encodings = make_source_encodings(&mut rng, 7, 4, 4).unwrap();
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..7).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let batch = routing_sample_batch(&mut rng, 7, 2, 4, &encodings, &targets).unwrap();
        assert_eq!(batch.samples.len(), 14);
        for j in 0..7 {
            for s in 0..2 {
                let o = (j + s) % 7;
                assert!(
                    batch
                        .samples
                        .iter()
                        .any(|smpl| smpl.in_src == j && smpl.out_src == o),
                    "pair ({j}, {o}) missing"
                );
            }
        }
        batch.check_gating().unwrap();
    }

    #[test]
    fn single_source_single_shift() {
        let mut rng = Rng::new(32);
        let encodings = make_source_encodings(&mut rng, 1, 4, 4).unwrap();
        let targets: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64; 7]).collect();
        let batch = routing_sample_batch(&mut rng, 1, 1, 4, &encodings, &targets).unwrap();
        assert_eq!(batch.samples.len(), 1);
        assert_eq!(batch.samples[0].in_src, 0);
        assert_eq!(batch.samples[0].out_src, 0);
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let make = || {
            let mut rng = Rng::new(77);
            let encodings = make_source_encodings(&mut rng, 3, 2, 4).unwrap();
            let targets = vec![vec![1.0; 7], vec![-1.0; 7]];
            routing_sample_batch(&mut rng, 3, 2, 2, &encodings, &targets).unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn non_orthonormal_encodings_rejected() {
        let mut rng = Rng::new(33);
        let bad = vec![Matrix::from_fn(4, 4, |_, _| 0.5)];
        let targets: Vec<Vec<f64>> = (0..4).map(|_| vec![0.0; 7]).collect();
        assert!(routing_sample_batch(&mut rng, 1, 1, 4, &bad, &targets).is_err());
    }

    #[test]
    fn spurious_strength_zero_makes_eval_sets_identical() {
        let mut rng = Rng::new(41);
        let spec = SpuriousSpec {
            spurious_strength: 0.0,
            ..Default::default()
        };
        let data = spurious_dataset(&mut rng, &spec, 32, 32).unwrap();
        assert_eq!(data.eval_with_xs, data.eval_without_xs);
    }

    #[test]
    fn spurious_cross_moment_has_designed_singular_values() {
        let mut rng = Rng::new(42);
        let spec = SpuriousSpec {
            core_strength: 1.5,
            spurious_strength: 0.4,
            ..Default::default()
        };
        let data = spurious_dataset(&mut rng, &spec, 8, 8).unwrap();
        let svd = svd_compact(&data.sigma_yx, 0.0).unwrap();
        assert_eq!(svd.rank(), 2);
        assert!((svd.s[0] - 1.5).abs() < 1e-10);
        assert!((svd.s[1] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn spurious_empirical_moment_approaches_designed_one() {
        let mut rng = Rng::new(43);
        let spec = SpuriousSpec {
            core_strength: 1.0,
            spurious_strength: 0.5,
            noise_level: 0.0,
            d_in: 6,
            d_out: 3,
        };
        let n = 100_000;
        let data = spurious_dataset(&mut rng, &spec, n, 4).unwrap();
        let stats = PopulationStats::from_batch(&data.train_xs, &data.train_ys).unwrap();
        let svd = svd_compact(&stats.sigma_yx, 1e-3).unwrap();
        assert!((svd.s[0] - 1.0).abs() < 0.05, "s0 = {}", svd.s[0]);
        assert!((svd.s[1] - 0.5).abs() < 0.05 * 0.5, "s1 = {}", svd.s[1]);
    }

    #[test]
    fn csv_exports_have_headers_and_rows() {
        let xs = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ys = Matrix::from_rows(&[vec![0.5], vec![-0.5]]).unwrap();
        let csv = regression_to_csv(&xs, &ys);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x0,x1,y0");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn routing_csv_prefixes_source_pair_columns() {
        let mut rng = Rng::new(55);
        let encodings = make_source_encodings(&mut rng, 2, 2, 4).unwrap();
        let targets = vec![vec![1.0; 7], vec![-1.0; 7]];
        let batch = routing_sample_batch(&mut rng, 2, 2, 2, &encodings, &targets).unwrap();
        let csv = routing_batch_to_csv(&batch);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "j,o,x0,x1,x2,x3,y0,y1,y2,y3,y4,y5,y6"
        );
        assert_eq!(lines.count(), 4);
    }
}
