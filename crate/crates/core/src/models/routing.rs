//! Gated routing network: per-source linear encoders and decoders around
//! one shared hidden layer.
//!
//! A sample tagged (j, o) flows through exactly three matrices:
//! `y = W_out[o] * W_hidden * W_in[j] * x`. Gradients therefore touch only
//! the encoder and decoder named by each sample, and always the hidden
//! layer; unused encoders and decoders receive exactly zero gradient.

use crate::datagen::RoutingBatch;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use std::path::Path;

/// Multi-source routing network with `m` encoders, `m` decoders, and one
/// shared hidden layer.
#[derive(Debug, Clone)]
pub struct RoutingNet {
    pub encoders: Vec<Matrix>,
    pub hidden: Matrix,
    pub decoders: Vec<Matrix>,
}

impl RoutingNet {
    pub fn new(encoders: Vec<Matrix>, hidden: Matrix, decoders: Vec<Matrix>) -> Result<Self> {
        if encoders.is_empty() || encoders.len() != decoders.len() {
            return Err(Error::invalid(
                "need the same positive number of encoders and decoders",
            ));
        }
        if hidden.rows() != hidden.cols() {
            return Err(Error::invalid("hidden layer must be square"));
        }
        let (er, ec) = (encoders[0].rows(), encoders[0].cols());
        if encoders.iter().any(|e| e.rows() != er || e.cols() != ec) {
            return Err(Error::invalid("all encoders must share a shape"));
        }
        let (dr, dc) = (decoders[0].rows(), decoders[0].cols());
        if decoders.iter().any(|d| d.rows() != dr || d.cols() != dc) {
            return Err(Error::invalid("all decoders must share a shape"));
        }
        if er != hidden.cols() || dc != hidden.rows() {
            return Err(Error::invalid("encoder/decoder shapes must match hidden"));
        }
        Ok(RoutingNet {
            encoders,
            hidden,
            decoders,
        })
    }

    pub fn sources(&self) -> usize {
        self.encoders.len()
    }

    pub fn input_dim(&self) -> usize {
        self.encoders[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.decoders[0].rows()
    }

    /// Parameter list in a fixed order: encoders, hidden, decoders.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut params: Vec<&mut Matrix> = Vec::with_capacity(2 * self.encoders.len() + 1);
        params.extend(self.encoders.iter_mut());
        params.push(&mut self.hidden);
        params.extend(self.decoders.iter_mut());
        params
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut entries: Vec<(String, &str, &Matrix)> = Vec::new();
        for (j, e) in self.encoders.iter().enumerate() {
            entries.push((format!("encoder_{j}"), "encoder", e));
        }
        entries.push(("hidden".to_string(), "hidden", &self.hidden));
        for (o, d) in self.decoders.iter().enumerate() {
            entries.push((format!("decoder_{o}"), "decoder", d));
        }
        let borrowed: Vec<(&str, &str, &Matrix)> = entries
            .iter()
            .map(|(n, r, m)| (n.as_str(), *r, *m))
            .collect();
        super::save_weight_dir(dir, &borrowed)
    }

    pub fn load(dir: &Path, sources: usize) -> Result<Self> {
        let enc_names: Vec<String> = (0..sources).map(|j| format!("encoder_{j}")).collect();
        let dec_names: Vec<String> = (0..sources).map(|o| format!("decoder_{o}")).collect();
        let mut names: Vec<&str> = enc_names.iter().map(|s| s.as_str()).collect();
        names.push("hidden");
        names.extend(dec_names.iter().map(|s| s.as_str()));
        let mut mats = super::load_weight_dir(dir, &names)?;
        let decoders = mats.split_off(sources + 1);
        let hidden = mats.pop().unwrap();
        RoutingNet::new(mats, hidden, decoders)
    }
}

/// Forward pass for one sample from input source `j` to output source `o`.
pub fn routing_forward(net: &RoutingNet, x: &[f64], j: usize, o: usize) -> Result<Vec<f64>> {
    if j >= net.sources() || o >= net.sources() {
        return Err(Error::invalid(format!(
            "source pair ({j}, {o}) out of range for {} sources",
            net.sources()
        )));
    }
    if x.len() != net.input_dim() {
        return Err(Error::invalid("input length does not match encoders"));
    }
    let h = net.hidden.matvec(&net.encoders[j].matvec(x));
    Ok(net.decoders[o].matvec(&h))
}

/// Per-matrix gradients of the batch MSE, in the same order as
/// [`RoutingNet::params_mut`].
#[derive(Debug, Clone)]
pub struct RoutingGrads {
    pub encoders: Vec<Matrix>,
    pub hidden: Matrix,
    pub decoders: Vec<Matrix>,
}

impl RoutingGrads {
    pub fn flatten(self) -> Vec<Matrix> {
        let mut all = self.encoders;
        all.push(self.hidden);
        all.extend(self.decoders);
        all
    }
}

/// Batch MSE loss `sum_i ||y_hat_i - y_i||^2 / (2n)` and its gradients.
///
/// Gradient accumulates only into the encoders and decoders named by the
/// batch samples, and always into the hidden layer.
pub fn routing_batch_grads(net: &RoutingNet, batch: &RoutingBatch) -> Result<(f64, RoutingGrads)> {
    if batch.samples.is_empty() {
        return Err(Error::invalid("empty routing batch"));
    }
    let m = net.sources();
    let scale = 1.0 / batch.samples.len() as f64;
    let mut loss = 0.0;
    let mut grads = RoutingGrads {
        encoders: net
            .encoders
            .iter()
            .map(|e| Matrix::zeros(e.rows(), e.cols()))
            .collect(),
        hidden: Matrix::zeros(net.hidden.rows(), net.hidden.cols()),
        decoders: net
            .decoders
            .iter()
            .map(|d| Matrix::zeros(d.rows(), d.cols()))
            .collect(),
    };

    for sample in &batch.samples {
        let (j, o) = (sample.in_src, sample.out_src);
        if j >= m || o >= m {
            return Err(Error::invalid("routing sample source index out of range"));
        }
        if sample.x.len() != net.input_dim() || sample.y.len() != net.output_dim() {
            return Err(Error::invalid("routing sample dimensions do not match"));
        }
        let encoded = net.encoders[j].matvec(&sample.x);
        let h = net.hidden.matvec(&encoded);
        let pred = net.decoders[o].matvec(&h);
        let residual: Vec<f64> = pred.iter().zip(&sample.y).map(|(p, y)| p - y).collect();
        loss += 0.5 * scale * residual.iter().map(|r| r * r).sum::<f64>();

        // decoder: r h^T ; hidden: (W_out^T r) encoded^T ; encoder: (W_h^T W_out^T r) x^T
        outer_accumulate(&mut grads.decoders[o], &residual, &h, scale);
        let dec_t_r = net.decoders[o].transpose().matvec(&residual);
        outer_accumulate(&mut grads.hidden, &dec_t_r, &encoded, scale);
        let hid_t = net.hidden.transpose().matvec(&dec_t_r);
        outer_accumulate(&mut grads.encoders[j], &hid_t, &sample.x, scale);
    }

    Ok((loss, grads))
}

fn outer_accumulate(target: &mut Matrix, left: &[f64], right: &[f64], scale: f64) {
    debug_assert_eq!(target.rows(), left.len());
    debug_assert_eq!(target.cols(), right.len());
    for (i, &l) in left.iter().enumerate() {
        let ls = l * scale;
        if ls == 0.0 {
            continue;
        }
        for (j, &r) in right.iter().enumerate() {
            let v = target.get(i, j) + ls * r;
            target.set(i, j, v);
        }
    }
}
