//! Model architectures: the 2-layer deep linear network and the gated
//! routing network, with forward passes, MSE losses, and analytic
//! gradients in both sample and population form.

mod routing;

pub use routing::{routing_batch_grads, routing_forward, RoutingGrads, RoutingNet};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Matrix};
use std::path::Path;

/// 2-layer deep linear network `y = V U x`.
///
/// `u` is H x d_in (first layer), `v` is d_out x H (second layer). The
/// product map `W = V U` carries the learned linear function.
#[derive(Debug, Clone)]
pub struct DeepLinearNet {
    pub u: Matrix,
    pub v: Matrix,
}

impl DeepLinearNet {
    pub fn new(u: Matrix, v: Matrix) -> Result<Self> {
        if v.cols() != u.rows() {
            return Err(Error::ShapeMismatch {
                expected_rows: v.cols(),
                expected_cols: u.cols(),
                got_rows: u.rows(),
                got_cols: u.cols(),
                context: "V columns must match U rows",
            });
        }
        Ok(DeepLinearNet { u, v })
    }

    pub fn d_in(&self) -> usize {
        self.u.cols()
    }

    pub fn hidden(&self) -> usize {
        self.u.rows()
    }

    pub fn d_out(&self) -> usize {
        self.v.rows()
    }

    /// The composed linear map `W = V U` (d_out x d_in).
    pub fn product_map(&self) -> Matrix {
        self.v.matmul(&self.u)
    }

    /// Frobenius norm of `V^T V - U U^T`.
    ///
    /// Zero for balanced weights; gradient flow conserves it.
    pub fn balancedness_gap(&self) -> f64 {
        let vtv = self.v.matmul_transa(&self.v);
        let uut = self.u.matmul_transb(&self.u);
        frobenius_norm(&vtv.sub(&uut))
    }

    /// Save as a directory of matrix text files plus a manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_weight_dir(
            dir,
            &[("u", "first_layer", &self.u), ("v", "second_layer", &self.v)],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mats = load_weight_dir(dir, &["u", "v"])?;
        let mut it = mats.into_iter();
        DeepLinearNet::new(it.next().unwrap(), it.next().unwrap())
    }
}

/// Sufficient statistics of a linear-regression dataset: the input
/// second moment and the input-output cross moment.
#[derive(Debug, Clone)]
pub struct PopulationStats {
    pub sigma_xx: Matrix,
    pub sigma_yx: Matrix,
}

impl PopulationStats {
    pub fn new(sigma_xx: Matrix, sigma_yx: Matrix) -> Result<Self> {
        if sigma_xx.rows() != sigma_xx.cols() {
            return Err(Error::invalid("sigma_xx must be square"));
        }
        if sigma_yx.cols() != sigma_xx.rows() {
            return Err(Error::invalid("sigma_yx columns must match sigma_xx"));
        }
        for i in 0..sigma_xx.rows() {
            for j in 0..i {
                if (sigma_xx.get(i, j) - sigma_xx.get(j, i)).abs() > 1e-9 {
                    return Err(Error::invalid("sigma_xx must be symmetric"));
                }
            }
        }
        Ok(PopulationStats { sigma_xx, sigma_yx })
    }

    /// Empirical statistics of a sample batch (rows are samples).
    pub fn from_batch(xs: &Matrix, ys: &Matrix) -> Result<Self> {
        if xs.rows() == 0 || xs.rows() != ys.rows() {
            return Err(Error::invalid("batch must be nonempty and aligned"));
        }
        let n = xs.rows() as f64;
        let sigma_xx = xs.matmul_transa(xs).scale(1.0 / n);
        let sigma_yx = ys.matmul_transa(xs).scale(1.0 / n);
        PopulationStats::new(sigma_xx, sigma_yx)
    }
}

/// Forward pass `V U x`.
pub fn dln_forward(net: &DeepLinearNet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.d_in() {
        return Err(Error::invalid(format!(
            "input length {} does not match d_in {}",
            x.len(),
            net.d_in()
        )));
    }
    Ok(net.v.matvec(&net.u.matvec(x)))
}

/// Population-mode loss and gradients.
///
/// Gradients: with residual `E = V U Sigma_xx - Sigma_yx`,
/// `grad_u = V^T E` and `grad_v = E U^T`. The returned loss is
/// `(tr(U^T V^T V U Sigma_xx) - 2 tr(V U Sigma_yx^T)) / 2`; the constant
/// output-covariance term is unavailable from these statistics and is
/// omitted, so population losses are offset from sample losses by that
/// constant.
pub fn dln_population_grads(
    net: &DeepLinearNet,
    stats: &PopulationStats,
) -> Result<(f64, Matrix, Matrix)> {
    if stats.sigma_xx.rows() != net.d_in() || stats.sigma_yx.rows() != net.d_out() {
        return Err(Error::invalid("statistics shapes do not match network"));
    }
    let w = net.product_map();
    let residual = w.matmul(&stats.sigma_xx).sub(&stats.sigma_yx);
    let grad_u = net.v.matmul_transa(&residual);
    let grad_v = residual.matmul_transb(&net.u);
    let loss = 0.5 * (w.dot(&w.matmul(&stats.sigma_xx)) - 2.0 * w.dot(&stats.sigma_yx));
    Ok((loss, grad_u, grad_v))
}

/// Sample-mode MSE loss `sum_i ||V U x_i - y_i||^2 / (2n)` and its
/// gradients, accumulated sample by sample.
///
/// Rows of `xs`/`ys` are samples. Agrees with [`dln_population_grads`]
/// evaluated on the empirical statistics of the same batch.
pub fn dln_batch_loss_grads(
    net: &DeepLinearNet,
    xs: &Matrix,
    ys: &Matrix,
) -> Result<(f64, Matrix, Matrix)> {
    if xs.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if xs.rows() != ys.rows() || xs.cols() != net.d_in() || ys.cols() != net.d_out() {
        return Err(Error::invalid("batch shapes do not match network"));
    }
    let n = xs.rows();
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad_u = Matrix::zeros(net.hidden(), net.d_in());
    let mut grad_v = Matrix::zeros(net.d_out(), net.hidden());
    for i in 0..n {
        let x = xs.row(i);
        let hidden = net.u.matvec(x);
        let pred = net.v.matvec(&hidden);
        let residual: Vec<f64> = pred.iter().zip(ys.row(i)).map(|(p, y)| p - y).collect();
        loss += 0.5 * scale * residual.iter().map(|r| r * r).sum::<f64>();
        // grad_v += r h^T / n ; grad_u += (V^T r) x^T / n
        for a in 0..net.d_out() {
            let ra = residual[a] * scale;
            if ra == 0.0 {
                continue;
            }
            for b in 0..net.hidden() {
                let v = grad_v.get(a, b) + ra * hidden[b];
                grad_v.set(a, b, v);
            }
        }
        let vt_r = net.v.transpose().matvec(&residual);
        for a in 0..net.hidden() {
            let va = vt_r[a] * scale;
            if va == 0.0 {
                continue;
            }
            for b in 0..net.d_in() {
                let v = grad_u.get(a, b) + va * x[b];
                grad_u.set(a, b, v);
            }
        }
    }
    Ok((loss, grad_u, grad_v))
}

/// Write named matrices as text files with a JSON manifest.
pub(crate) fn save_weight_dir(dir: &Path, entries: &[(&str, &str, &Matrix)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for (name, role, m) in entries {
        let file = format!("{name}.mat");
        crate::experiments::atomic_write(&dir.join(&file), &crate::linalg::matrix_to_text(m))?;
        manifest.push(serde_json::json!({
            "name": name,
            "role": role,
            "rows": m.rows(),
            "cols": m.cols(),
            "file": file,
        }));
    }
    let manifest = serde_json::json!({ "matrices": manifest });
    crate::experiments::atomic_write(
        &dir.join("manifest.json"),
        &format!("{:#}\n", manifest),
    )
}

pub(crate) fn load_weight_dir(dir: &Path, names: &[&str]) -> Result<Vec<Matrix>> {
    names
        .iter()
        .map(|name| {
            let text = std::fs::read_to_string(dir.join(format!("{name}.mat")))?;
            crate::linalg::matrix_from_text(&text)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_net() -> DeepLinearNet {
        let u = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![-0.75, 1.5]]).unwrap();
        let v = Matrix::from_rows(&[vec![1.0, 0.5, -0.5], vec![-2.0, 0.0, 1.0]]).unwrap();
        DeepLinearNet::new(u, v).unwrap()
    }

    #[test]
    fn identity_net_is_identity_map() {
        let net = DeepLinearNet::new(Matrix::identity(3), Matrix::identity(3)).unwrap();
        let y = dln_forward(&net, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = DeepLinearNet::new(Matrix::zeros(4, 2), Matrix::zeros(3, 4)).unwrap();
        let y = dln_forward(&net, &[1.0, 2.0]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_naive_chain() {
        let net = toy_net();
        let x = [0.3, -0.7];
        let y = dln_forward(&net, &x).unwrap();
        // Naive triple loop over V * U * x.
        let mut expect = vec![0.0; net.d_out()];
        for a in 0..net.d_out() {
            for h in 0..net.hidden() {
                for b in 0..net.d_in() {
                    expect[a] += net.v.get(a, h) * net.u.get(h, b) * x[b];
                }
            }
        }
        for (got, want) in y.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn population_gradients_vanish_at_the_optimum() {
        let net = toy_net();
        let stats = PopulationStats::new(Matrix::identity(2), net.product_map()).unwrap();
        let (_, gu, gv) = dln_population_grads(&net, &stats).unwrap();
        assert!(frobenius_norm(&gu) < 1e-12);
        assert!(frobenius_norm(&gv) < 1e-12);
    }

    #[test]
    fn population_gradients_with_zero_second_layer() {
        let u = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let v = Matrix::zeros(2, 2);
        let net = DeepLinearNet::new(u.clone(), v).unwrap();
        let sigma_yx = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.25, 2.0]]).unwrap();
        let stats = PopulationStats::new(Matrix::identity(2), sigma_yx.clone()).unwrap();
        let (_, gu, gv) = dln_population_grads(&net, &stats).unwrap();
        assert!(gu.is_zero(), "grad_u must vanish when V = 0");
        let expect = sigma_yx.matmul_transb(&u).scale(-1.0);
        for (g, e) in gv.data().iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn perfect_fit_batch_has_zero_loss_and_grads() {
        let net = toy_net();
        let xs = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, -0.5]]).unwrap();
        let w = net.product_map();
        let ys = xs.matmul_transb(&w);
        let (loss, gu, gv) = dln_batch_loss_grads(&net, &xs, &ys).unwrap();
        assert!(loss < 1e-24);
        assert!(frobenius_norm(&gu) < 1e-12);
        assert!(frobenius_norm(&gv) < 1e-12);
    }

    #[test]
    fn scalar_case_matches_hand_calculus() {
        // u, v scalars; x = 1, y = 0: loss = (uv)^2/2, grad_u = v(vu),
        // grad_v = (vu)u.
        let (u, v) = (0.7, -1.3);
        let net = DeepLinearNet::new(
            Matrix::from_vec(1, 1, vec![u]).unwrap(),
            Matrix::from_vec(1, 1, vec![v]).unwrap(),
        )
        .unwrap();
        let xs = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let ys = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let (loss, gu, gv) = dln_batch_loss_grads(&net, &xs, &ys).unwrap();
        assert!((loss - 0.5 * (u * v) * (u * v)).abs() < 1e-15);
        assert!((gu.get(0, 0) - v * (v * u)).abs() < 1e-15);
        assert!((gv.get(0, 0) - (v * u) * u).abs() < 1e-15);
    }

    #[test]
    fn batch_and_population_routes_agree_on_empirical_stats() {
        let net = toy_net();
        let xs = Matrix::from_rows(&[
            vec![1.0, 0.3],
            vec![-0.2, 1.1],
            vec![0.5, -0.5],
            vec![2.0, 0.1],
        ])
        .unwrap();
        let ys = Matrix::from_rows(&[
            vec![0.2, -1.0],
            vec![1.0, 0.0],
            vec![-0.3, 0.4],
            vec![0.6, 1.2],
        ])
        .unwrap();
        let (_, gu_b, gv_b) = dln_batch_loss_grads(&net, &xs, &ys).unwrap();
        let stats = PopulationStats::from_batch(&xs, &ys).unwrap();
        let (_, gu_p, gv_p) = dln_population_grads(&net, &stats).unwrap();
        for (a, b) in gu_b.data().iter().zip(gu_p.data()) {
            assert!((a - b).abs() < 1e-10, "grad_u routes disagree: {a} vs {b}");
        }
        for (a, b) in gv_b.data().iter().zip(gv_p.data()) {
            assert!((a - b).abs() < 1e-10, "grad_v routes disagree: {a} vs {b}");
        }
    }

    #[test]
    fn balancedness_gap_of_zero_first_layer() {
        let u = Matrix::zeros(3, 2);
        let v = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 0.5]]).unwrap();
        let net = DeepLinearNet::new(u, v.clone()).unwrap();
        let vtv = v.matmul_transa(&v);
        assert!((net.balancedness_gap() - frobenius_norm(&vtv)).abs() < 1e-14);
    }

    #[test]
    fn weight_dir_roundtrip() {
        let net = toy_net();
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path()).unwrap();
        let loaded = DeepLinearNet::load(dir.path()).unwrap();
        assert_eq!(net.u, loaded.u);
        assert_eq!(net.v, loaded.v);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"rows\""));
    }
}
