//! Two-step pushforward models at desk scale.
//!
//! Step one learns a decoder G (and paired encoder) from data: either the
//! top-d principal directions (affine) or a small tanh autoencoder trained
//! by mini-batch gradient descent. Step two fits a latent density P on the
//! resulting codes: a diagonal Gaussian or a diagonal-covariance Gaussian
//! mixture fit by EM. Samples are draws z ~ P pushed through G.
//!
//! All fitting runs in f64. Persisted parameters are a raw little-endian
//! f32 blob plus a JSON manifest (`"format": 1`); the blob holds, in order,
//! the decoder offset/weights and then the base weights, means, and
//! variances (layout is documented at [`PushforwardModel::collect_params`]).

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Decoders
// ---------------------------------------------------------------------------

/// Affine decoder x = V z + b with orthonormal columns V (D x d); the paired
/// encoder is z = V^T (x - b).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDecoder {
    pub ambient: usize,
    pub latent: usize,
    /// Row-major D x d basis.
    pub basis: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineDecoder {
    pub fn decode(&self, z: &[f64], out: &mut [f64]) {
        for (a, slot) in out.iter_mut().enumerate() {
            let mut acc = self.offset[a];
            for (j, zj) in z.iter().enumerate() {
                acc += self.basis[a * self.latent + j] * zj;
            }
            *slot = acc;
        }
    }

    pub fn encode(&self, x: &[f64], out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..self.ambient {
                acc += self.basis[a * self.latent + j] * (x[a] - self.offset[a]);
            }
            *slot = acc;
        }
    }
}

/// One dense layer y = W x + b.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn new_seeded(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / cols as f64).sqrt();
        let w = (0..rows * cols).map(|_| std * rng.next_normal()).collect();
        Dense { rows, cols, w, b: vec![0.0; rows] }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let mut acc = self.b[r];
            for (c, v) in x.iter().enumerate() {
                acc += self.w[r * self.cols + c] * v;
            }
            out[r] = acc;
        }
    }
}

/// Stack of dense layers with tanh on every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn new_seeded(dims: &[usize], rng: &mut Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Dense::new_seeded(w[1], w[0], rng))
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.cols).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }

    /// Forward pass; returns the post-activation of every layer (last entry
    /// is the linear output).
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.rows];
            layer.apply(&cur, &mut out);
            if li + 1 < self.layers.len() {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(out.clone());
            cur = out;
        }
        acts
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let acts = self.forward_trace(x);
        out.copy_from_slice(acts.last().expect("network has layers"));
    }

    /// Backpropagate `grad_out` (dL/d output) for input `x`, adding into
    /// `grads` (same shapes as the layers). Returns dL/d input.
    fn backward(
        &self,
        x: &[f64],
        acts: &[Vec<f64>],
        grad_out: &[f64],
        grads: &mut [DenseGrad],
    ) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input: &[f64] = if li == 0 { x } else { &acts[li - 1] };
            // accumulate parameter gradients
            for r in 0..layer.rows {
                grads[li].b[r] += delta[r];
                for c in 0..layer.cols {
                    grads[li].w[r * layer.cols + c] += delta[r] * input[c];
                }
            }
            if li == 0 {
                let mut dx = vec![0.0; layer.cols];
                for r in 0..layer.rows {
                    for (c, slot) in dx.iter_mut().enumerate() {
                        *slot += layer.w[r * layer.cols + c] * delta[r];
                    }
                }
                return dx;
            }
            let mut next = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                for (c, slot) in next.iter_mut().enumerate() {
                    *slot += layer.w[r * layer.cols + c] * delta[r];
                }
            }
            // through tanh of the previous layer
            for (slot, h) in next.iter_mut().zip(&acts[li - 1]) {
                *slot *= 1.0 - h * h;
            }
            delta = next;
        }
        unreachable!("network has at least one layer")
    }
}

#[derive(Debug, Clone)]
struct DenseGrad {
    w: Vec<f64>,
    b: Vec<f64>,
}

impl DenseGrad {
    fn zeros_like(layer: &Dense) -> Self {
        DenseGrad { w: vec![0.0; layer.w.len()], b: vec![0.0; layer.b.len()] }
    }
}

/// MLP autoencoder: encoder D -> widths... -> d, decoder mirrored. Inputs
/// are centered by the stored column mean before encoding (and the mean is
/// added back after decoding), which keeps the tanh layers out of
/// saturation regardless of where the data sits in ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAutoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub widths: Vec<usize>,
    pub center: Vec<f64>,
}

impl MlpAutoencoder {
    pub fn encode(&self, x: &[f64], out: &mut [f64]) {
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(v, c)| v - c).collect();
        self.encoder.apply(&centered, out);
    }

    pub fn decode(&self, z: &[f64], out: &mut [f64]) {
        self.decoder.apply(z, out);
        for (o, c) in out.iter_mut().zip(&self.center) {
            *o += c;
        }
    }
}

/// First-step decoder variants.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Affine(AffineDecoder),
    Mlp(MlpAutoencoder),
}

impl Decoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Affine(a) => a.latent,
            Decoder::Mlp(m) => m.decoder.input_dim(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Decoder::Affine(a) => a.ambient,
            Decoder::Mlp(m) => m.decoder.output_dim(),
        }
    }

    pub fn decode(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Decoder::Affine(a) => a.decode(z, out),
            Decoder::Mlp(m) => m.decode(z, out),
        }
    }

    pub fn encode(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Decoder::Affine(a) => a.encode(x, out),
            Decoder::Mlp(m) => m.encode(x, out),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Decoder::Affine(_) => "affine",
            Decoder::Mlp(_) => "mlp",
        }
    }
}

// ---------------------------------------------------------------------------
// Latent densities
// ---------------------------------------------------------------------------

/// Diagonal-covariance Gaussian mixture over the latent space; a single
/// Gaussian is the one-component case.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDensity {
    pub latent: usize,
    pub components: usize,
    /// Mixture weights, positive, summing to 1.
    pub weights: Vec<f64>,
    /// Row-major K x d means.
    pub means: Vec<f64>,
    /// Row-major K x d per-dimension variances.
    pub variances: Vec<f64>,
    pub kind: BaseKind,
}

/// Which second-step density to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "components")]
pub enum BaseKind {
    Gaussian,
    Gmm(usize),
}

impl BaseKind {
    pub fn name(&self) -> String {
        match self {
            BaseKind::Gaussian => "gaussian".into(),
            BaseKind::Gmm(k) => format!("gmm({k})"),
        }
    }
}

impl std::str::FromStr for BaseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "gaussian" {
            return Ok(BaseKind::Gaussian);
        }
        if let Some(rest) = s.strip_prefix("gmm") {
            // accept "gmm", "gmm(K)", and "gmm:K"
            let inner = rest
                .trim_start_matches([':', '('])
                .trim_end_matches(')');
            let k: usize = if inner.is_empty() {
                10
            } else {
                inner.parse().map_err(|_| {
                    Error::Argument(format!("cannot parse mixture size from {s:?}"))
                })?
            };
            return Ok(BaseKind::Gmm(k));
        }
        Err(Error::Argument(format!(
            "unknown base kind {s:?}; expected \"gaussian\" or \"gmm(K)\""
        )))
    }
}

impl LatentDensity {
    pub fn validate(&self) -> Result<()> {
        let k = self.components;
        let d = self.latent;
        if self.weights.len() != k || self.means.len() != k * d || self.variances.len() != k * d {
            return Err(Error::Validation("latent density has inconsistent shapes".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        if self.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Validation("mixture weights must be positive".into()));
        }
        if self.variances.iter().any(|&v| v < 0.0) {
            return Err(Error::Validation("variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Default variance floor for fitted densities.
pub const VAR_FLOOR: f64 = 1e-6;

/// Closed-form single diagonal Gaussian: per-dimension mean and biased
/// variance, floored.
pub fn fit_gaussian(codes: &DataMatrix<f64>, var_floor: f64) -> Result<LatentDensity> {
    if codes.n() == 0 {
        return Err(Error::Argument("cannot fit a density to zero codes".into()));
    }
    let (mean, var) = moments(codes, None);
    let variances = var.into_iter().map(|v| v.max(var_floor)).collect();
    let density = LatentDensity {
        latent: codes.dim(),
        components: 1,
        weights: vec![1.0],
        means: mean,
        variances,
        kind: BaseKind::Gaussian,
    };
    density.validate()?;
    Ok(density)
}

/// Mean and biased variance per dimension, optionally responsibility-weighted.
/// Accumulation is in row order.
fn moments(codes: &DataMatrix<f64>, resp: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let d = codes.dim();
    let n = codes.n();
    let mut total = 0.0f64;
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        let r = resp.map(|r| r[i]).unwrap_or(1.0);
        total += r;
        for (m, v) in mean.iter_mut().zip(codes.row(i)) {
            *m += r * v;
        }
    }
    for m in mean.iter_mut() {
        *m /= total;
    }
    let mut var = vec![0.0f64; d];
    for i in 0..n {
        let r = resp.map(|r| r[i]).unwrap_or(1.0);
        for (s, (v, m)) in var.iter_mut().zip(codes.row(i).iter().zip(&mean)) {
            let dlt = v - m;
            *s += r * dlt * dlt;
        }
    }
    for s in var.iter_mut() {
        *s /= total;
    }
    (mean, var)
}

/// EM configuration for [`fit_gmm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub var_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig { max_iters: 200, tol: 1e-8, seed: 0, var_floor: VAR_FLOOR }
    }
}

/// Result of an EM fit: the density plus its log-likelihood trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub density: LatentDensity,
    pub log_likelihood: Vec<f64>,
    pub reseeded_components: usize,
}

/// Diagonal-covariance GMM via EM with k-means++ initialization.
pub fn fit_gmm(codes: &DataMatrix<f64>, k: usize, cfg: &GmmConfig) -> Result<GmmFit> {
    let n = codes.n();
    let d = codes.dim();
    if k < 1 {
        return Err(Error::Argument("mixture needs at least one component".into()));
    }
    if n < k {
        return Err(Error::Argument(format!(
            "cannot fit {k} components to {n} codes"
        )));
    }

    // Initialization from a k-means pass.
    let km = crate::cluster::kmeanspp(codes, k, cfg.seed, 1)?;
    let mut weights: Vec<f64> =
        km.groups.sizes().iter().map(|&s| s as f64 / n as f64).collect();
    let mut means = km.centroids.clone();
    let (_, global_var) = moments(codes, None);
    let mut variances = vec![0.0f64; k * d];
    for c in 0..k {
        for j in 0..d {
            variances[c * d + j] = global_var[j].max(cfg.var_floor);
        }
    }

    let mut trace = Vec::new();
    let mut reseeded = 0usize;
    let mut resp = vec![0.0f64; n * k];
    for _iter in 0..cfg.max_iters {
        // E-step with log-sum-exp.
        let mut ll = 0.0f64;
        for i in 0..n {
            let z = codes.row(i);
            let mut logp = vec![0.0f64; k];
            for c in 0..k {
                logp[c] = weights[c].ln() + diag_log_pdf(z, &means[c * d..(c + 1) * d], &variances[c * d..(c + 1) * d]);
            }
            let mx = logp.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for lp in logp.iter() {
                sum += (lp - mx).exp();
            }
            let lse = mx + sum.ln();
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (logp[c] - lse).exp();
            }
        }
        let converged = trace
            .last()
            .map(|&prev: &f64| (ll - prev) < cfg.tol)
            .unwrap_or(false);
        trace.push(ll);
        if converged {
            break;
        }

        // M-step.
        for c in 0..k {
            let rc: Vec<f64> = (0..n).map(|i| resp[i * k + c]).collect();
            let mass: f64 = rc.iter().sum();
            if mass < 1e-12 {
                // dead component: reseed on the farthest point from its mean
                let far = (0..n)
                    .map(|i| {
                        let mut dist = 0.0;
                        for (v, m) in codes.row(i).iter().zip(&means[c * d..(c + 1) * d]) {
                            dist += (v - m) * (v - m);
                        }
                        (dist, i)
                    })
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .map(|(_, i)| i)
                    .unwrap();
                means[c * d..(c + 1) * d]
                    .copy_from_slice(codes.row(far));
                for j in 0..d {
                    variances[c * d + j] = global_var[j].max(cfg.var_floor);
                }
                weights[c] = 1.0 / n as f64;
                reseeded += 1;
                continue;
            }
            let (m, v) = moments(codes, Some(&rc));
            means[c * d..(c + 1) * d].copy_from_slice(&m);
            for j in 0..d {
                variances[c * d + j] = v[j].max(cfg.var_floor);
            }
            weights[c] = mass / n as f64;
        }
        // renormalize after any reseeds
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
    }

    let kind = if k == 1 { BaseKind::Gaussian } else { BaseKind::Gmm(k) };
    let density = LatentDensity { latent: d, components: k, weights, means, variances, kind };
    density.validate()?;
    Ok(GmmFit { density, log_likelihood: trace, reseeded_components: reseeded })
}

#[inline]
fn diag_log_pdf(z: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.8378770664093453;
    let mut acc = 0.0;
    for ((zv, m), v) in z.iter().zip(mean).zip(var) {
        let dlt = zv - m;
        acc += -0.5 * (LN_2PI + v.ln() + dlt * dlt / v);
    }
    acc
}

// ---------------------------------------------------------------------------
// Two-step model
// ---------------------------------------------------------------------------

/// Training metadata recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub latent_dim: usize,
    pub reconstruction_error: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub autoencoder_loss: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub log_likelihood: Vec<f64>,
    #[serde(default)]
    pub reseeded_components: usize,
}

/// A pushforward model: decoder G plus latent base density.
#[derive(Debug, Clone, PartialEq)]
pub struct PushforwardModel {
    pub decoder: Decoder,
    pub base: LatentDensity,
    pub meta: TrainMeta,
}

/// First-step choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DecoderKind {
    Affine,
    Mlp(MlpConfig),
}

impl DecoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderKind::Affine => "affine",
            DecoderKind::Mlp(_) => "mlp",
        }
    }
}

/// Gradient-descent configuration for the MLP autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { widths: vec![64, 64], learning_rate: 0.01, epochs: 50, batch_size: 64 }
    }
}

/// PCA fit: offset = column mean, basis = top-d principal directions of the
/// biased covariance. Returns the decoder, the codes, and the mean squared
/// residual per point.
pub fn fit_pca(x: &DataMatrix<f64>, d: usize) -> Result<(AffineDecoder, DataMatrix<f64>, f64)> {
    let n = x.n();
    let ambient = x.dim();
    if d < 1 || d > ambient.min(n) {
        return Err(Error::Argument(format!(
            "latent dimension {d} must be in 1..=min(n = {n}, D = {ambient})"
        )));
    }
    let mut mean = vec![0.0f64; ambient];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; ambient * ambient];
    for row in x.rows() {
        for i in 0..ambient {
            let di = row[i] - mean[i];
            for j in i..ambient {
                cov[i * ambient + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..ambient {
        for j in i..ambient {
            let v = cov[i * ambient + j] / n as f64;
            cov[i * ambient + j] = v;
            cov[j * ambient + i] = v;
        }
    }
    let (_, vecs) = symmetric_eigen(&cov, ambient);
    let mut basis = vec![0.0f64; ambient * d];
    for j in 0..d {
        for a in 0..ambient {
            basis[a * d + j] = vecs[j * ambient + a];
        }
    }
    let decoder = AffineDecoder { ambient, latent: d, basis, offset: mean };

    let mut codes = vec![0.0f64; n * d];
    let mut rec = vec![0.0f64; ambient];
    let mut sse = 0.0f64;
    for i in 0..n {
        let (z, row) = (&mut codes[i * d..(i + 1) * d], x.row(i));
        decoder.encode(row, z);
        decoder.decode(z, &mut rec);
        for (r, v) in rec.iter().zip(row) {
            let dlt = r - v;
            sse += dlt * dlt;
        }
    }
    let codes = DataMatrix::new(n, d, codes)?;
    Ok((decoder, codes, sse / n as f64))
}

/// Train an MLP autoencoder by mini-batch gradient descent on the mean
/// squared reconstruction error. Deterministic given the seed.
pub fn fit_mlp_ae(
    x: &DataMatrix<f64>,
    d: usize,
    cfg: &MlpConfig,
    seed: u64,
) -> Result<(MlpAutoencoder, DataMatrix<f64>, f64, Vec<f64>)> {
    let n = x.n();
    let ambient = x.dim();
    if d < 1 {
        return Err(Error::Argument("latent dimension must be at least 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut rng = Rng::new(seed);
    let mut enc_dims = vec![ambient];
    enc_dims.extend(&cfg.widths);
    enc_dims.push(d);
    let mut dec_dims = vec![d];
    dec_dims.extend(cfg.widths.iter().rev());
    dec_dims.push(ambient);
    let mut center = vec![0.0f64; ambient];
    for row in x.rows() {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in center.iter_mut() {
        *c /= n as f64;
    }
    let mut ae = MlpAutoencoder {
        encoder: Mlp::new_seeded(&enc_dims, &mut rng),
        decoder: Mlp::new_seeded(&dec_dims, &mut rng),
        widths: cfg.widths.clone(),
        center,
    };
    // Training runs on centered rows; the +center on decode cancels in the
    // loss, so gradients are unchanged.
    let centered: Vec<f64> = x
        .rows()
        .flat_map(|r| r.iter().zip(&ae.center).map(|(v, c)| v - c).collect::<Vec<_>>())
        .collect();
    let crow = |i: usize| -> &[f64] { &centered[i * ambient..(i + 1) * ambient] };

    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Fisher-Yates shuffle from the stream.
        for i in (1..n).rev() {
            let j = rng.next_index(i + 1);
            order.swap(i, j);
        }
        let mut epoch_sse = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut enc_grads: Vec<DenseGrad> =
                ae.encoder.layers.iter().map(DenseGrad::zeros_like).collect();
            let mut dec_grads: Vec<DenseGrad> =
                ae.decoder.layers.iter().map(DenseGrad::zeros_like).collect();
            for &i in batch {
                let row = crow(i);
                let enc_acts = ae.encoder.forward_trace(row);
                let z = enc_acts.last().unwrap().clone();
                let dec_acts = ae.decoder.forward_trace(&z);
                let out = dec_acts.last().unwrap();
                let mut grad_out = vec![0.0; ambient];
                for (g, (o, v)) in grad_out.iter_mut().zip(out.iter().zip(row)) {
                    let dlt = o - v;
                    epoch_sse += dlt * dlt;
                    *g = 2.0 * dlt * scale;
                }
                let grad_z = ae.decoder.backward(&z, &dec_acts, &grad_out, &mut dec_grads);
                ae.encoder.backward(row, &enc_acts, &grad_z, &mut enc_grads);
            }
            let lr = cfg.learning_rate;
            for (layer, grad) in ae.encoder.layers.iter_mut().zip(&enc_grads) {
                for (w, g) in layer.w.iter_mut().zip(&grad.w) {
                    *w -= lr * g;
                }
                for (b, g) in layer.b.iter_mut().zip(&grad.b) {
                    *b -= lr * g;
                }
            }
            for (layer, grad) in ae.decoder.layers.iter_mut().zip(&dec_grads) {
                for (w, g) in layer.w.iter_mut().zip(&grad.w) {
                    *w -= lr * g;
                }
                for (b, g) in layer.b.iter_mut().zip(&grad.b) {
                    *b -= lr * g;
                }
            }
        }
        let epoch_loss = epoch_sse / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("reconstruction loss became {epoch_loss}"),
            });
        }
        trace.push(epoch_loss);
    }

    // Final codes and reconstruction error, via the centered paths.
    let mut codes = vec![0.0f64; n * d];
    let mut rec = vec![0.0f64; ambient];
    let mut sse = 0.0f64;
    for i in 0..n {
        let row = x.row(i);
        ae.encode(row, &mut codes[i * d..(i + 1) * d]);
        ae.decode(&codes[i * d..(i + 1) * d], &mut rec);
        for (r, v) in rec.iter().zip(row) {
            let dlt = r - v;
            sse += dlt * dlt;
        }
    }
    let codes = DataMatrix::new(n, d, codes)?;
    Ok((ae, codes, sse / n as f64, trace))
}

/// Fit the two-step model: decoder first, then the latent density on the
/// codes. The seed drives the autoencoder (sub-stream 0) and the density
/// fit (sub-stream 1).
pub fn fit_two_step(
    x: &DataMatrix<f64>,
    d: usize,
    base_kind: BaseKind,
    decoder_kind: &DecoderKind,
    seed: u64,
) -> Result<PushforwardModel> {
    let (decoder, codes, recon, ae_trace) = match decoder_kind {
        DecoderKind::Affine => {
            let (dec, codes, recon) = fit_pca(x, d)?;
            (Decoder::Affine(dec), codes, recon, Vec::new())
        }
        DecoderKind::Mlp(cfg) => {
            let (ae, codes, recon, trace) =
                fit_mlp_ae(x, d, cfg, Rng::substream_seed(seed, 0))?;
            (Decoder::Mlp(ae), codes, recon, trace)
        }
    };
    let (base, ll, reseeds) = match base_kind {
        BaseKind::Gaussian => (fit_gaussian(&codes, VAR_FLOOR)?, Vec::new(), 0),
        BaseKind::Gmm(k) => {
            let cfg = GmmConfig { seed: Rng::substream_seed(seed, 1), ..GmmConfig::default() };
            let fit = fit_gmm(&codes, k, &cfg)?;
            (fit.density, fit.log_likelihood, fit.reseeded_components)
        }
    };
    Ok(PushforwardModel {
        decoder,
        base,
        meta: TrainMeta {
            latent_dim: d,
            reconstruction_error: recon,
            autoencoder_loss: ae_trace,
            log_likelihood: ll,
            reseeded_components: reseeds,
        },
    })
}

/// Draw m decoded samples. Per sample: one categorical draw for the mixture
/// component, then d normals for the latent vector.
pub fn sample(model: &PushforwardModel, m: usize, seed: u64) -> Result<DataMatrix<f64>> {
    if m < 1 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let d = model.base.latent;
    let ambient = model.decoder.ambient_dim();
    let mut rng = Rng::new(seed);
    let mut values = vec![0.0f64; m * ambient];
    let mut z = vec![0.0f64; d];
    for i in 0..m {
        let c = rng.next_categorical(&model.base.weights);
        for (j, zj) in z.iter_mut().enumerate() {
            let mu = model.base.means[c * d + j];
            let sd = model.base.variances[c * d + j].sqrt();
            *zj = mu + sd * rng.next_normal();
        }
        model.decoder.decode(&z, &mut values[i * ambient..(i + 1) * ambient]);
    }
    DataMatrix::new(m, ambient, values)
}

// ---------------------------------------------------------------------------
// Persistence: JSON manifest + f32 parameter blob
// ---------------------------------------------------------------------------

/// Manifest format version.
pub const FORMAT_VERSION: u32 = 1;

/// JSON manifest describing one persisted pushforward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: u32,
    pub ambient: usize,
    pub latent: usize,
    pub decoder: DecoderShape,
    pub base: BaseShape,
    pub param_count: usize,
    pub checksum: String,
    pub training: TrainMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DecoderShape {
    Affine,
    Mlp { widths: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BaseShape {
    Gaussian,
    Gmm { components: usize },
}

impl PushforwardModel {
    /// Flatten all parameters, in the persisted order:
    /// decoder first (affine: offset then row-major basis; mlp: center,
    /// then encoder layers, then decoder layers, each layer as row-major
    /// weights then biases), then base weights, means, and variances.
    pub fn collect_params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        match &self.decoder {
            Decoder::Affine(a) => {
                p.extend_from_slice(&a.offset);
                p.extend_from_slice(&a.basis);
            }
            Decoder::Mlp(m) => {
                p.extend_from_slice(&m.center);
                for mlp in [&m.encoder, &m.decoder] {
                    for layer in &mlp.layers {
                        p.extend_from_slice(&layer.w);
                        p.extend_from_slice(&layer.b);
                    }
                }
            }
        }
        p.extend_from_slice(&self.base.weights);
        p.extend_from_slice(&self.base.means);
        p.extend_from_slice(&self.base.variances);
        p
    }

    fn restore_params(&mut self, params: &[f64]) -> Result<()> {
        let mut cursor = 0usize;
        let mut take = |len: usize| -> Result<&[f64]> {
            if cursor + len > params.len() {
                return Err(Error::Integrity(format!(
                    "parameter blob too short: wanted {} values, have {}",
                    cursor + len,
                    params.len()
                )));
            }
            let s = &params[cursor..cursor + len];
            cursor += len;
            Ok(s)
        };
        match &mut self.decoder {
            Decoder::Affine(a) => {
                a.offset.copy_from_slice(take(a.ambient)?);
                a.basis.copy_from_slice(take(a.ambient * a.latent)?);
            }
            Decoder::Mlp(m) => {
                let ambient = m.center.len();
                m.center.copy_from_slice(take(ambient)?);
                for mlp in [&mut m.encoder, &mut m.decoder] {
                    for layer in &mut mlp.layers {
                        layer.w.copy_from_slice(take(layer.rows * layer.cols)?);
                        layer.b.copy_from_slice(take(layer.rows)?);
                    }
                }
            }
        }
        let k = self.base.components;
        let d = self.base.latent;
        self.base.weights.copy_from_slice(take(k)?);
        self.base.means.copy_from_slice(take(k * d)?);
        self.base.variances.copy_from_slice(take(k * d)?);
        if cursor != params.len() {
            return Err(Error::Integrity(format!(
                "parameter blob has {} trailing values",
                params.len() - cursor
            )));
        }
        Ok(())
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            format: FORMAT_VERSION,
            ambient: self.decoder.ambient_dim(),
            latent: self.base.latent,
            decoder: match &self.decoder {
                Decoder::Affine(_) => DecoderShape::Affine,
                Decoder::Mlp(m) => DecoderShape::Mlp { widths: m.widths.clone() },
            },
            base: match self.base.kind {
                BaseKind::Gaussian => BaseShape::Gaussian,
                BaseKind::Gmm(k) => BaseShape::Gmm { components: k },
            },
            param_count: self.collect_params().len(),
            checksum: checksum_hex(&params_to_blob(&self.collect_params())),
            training: self.meta.clone(),
        }
    }

    /// Rebuild an empty-parameter model from a manifest, for loading.
    pub fn from_manifest(manifest: &ModelManifest) -> Result<PushforwardModel> {
        if manifest.format != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format {} (expected {FORMAT_VERSION})",
                manifest.format
            )));
        }
        let ambient = manifest.ambient;
        let d = manifest.latent;
        let decoder = match &manifest.decoder {
            DecoderShape::Affine => Decoder::Affine(AffineDecoder {
                ambient,
                latent: d,
                basis: vec![0.0; ambient * d],
                offset: vec![0.0; ambient],
            }),
            DecoderShape::Mlp { widths } => {
                let mut enc_dims = vec![ambient];
                enc_dims.extend(widths);
                enc_dims.push(d);
                let mut dec_dims = vec![d];
                dec_dims.extend(widths.iter().rev());
                dec_dims.push(ambient);
                let mut zero_rng = Rng::new(0);
                Decoder::Mlp(MlpAutoencoder {
                    encoder: Mlp::new_seeded(&enc_dims, &mut zero_rng),
                    decoder: Mlp::new_seeded(&dec_dims, &mut zero_rng),
                    widths: widths.clone(),
                    center: vec![0.0; ambient],
                })
            }
        };
        let (kind, k) = match manifest.base {
            BaseShape::Gaussian => (BaseKind::Gaussian, 1),
            BaseShape::Gmm { components } => (BaseKind::Gmm(components), components),
        };
        Ok(PushforwardModel {
            decoder,
            base: LatentDensity {
                latent: d,
                components: k,
                weights: vec![0.0; k],
                means: vec![0.0; k * d],
                variances: vec![0.0; k * d],
                kind,
            },
            meta: manifest.training.clone(),
        })
    }
}

pub fn params_to_blob(params: &[f64]) -> Vec<u8> {
    let mut blob = Vec::with_capacity(params.len() * 4);
    for &p in params {
        blob.extend_from_slice(&(p as f32).to_le_bytes());
    }
    blob
}

pub fn blob_to_params(blob: &[u8]) -> Result<Vec<f64>> {
    if blob.len() % 4 != 0 {
        return Err(Error::Integrity(format!(
            "parameter blob length {} is not a multiple of 4",
            blob.len()
        )));
    }
    Ok(blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// FNV-1a 64-bit over the blob bytes, as fixed-width hex.
pub fn checksum_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Write `manifest.json` and `model.params` into `dir`.
pub fn save_model(model: &PushforwardModel, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let blob = params_to_blob(&model.collect_params());
    std::fs::write(dir.join("model.params"), &blob)?;
    let manifest = model.manifest();
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Load a model persisted by [`save_model`]. Parameters come back as the
/// exact f64 widening of the stored f32 values; the checksum is verified.
pub fn load_model(dir: &std::path::Path) -> Result<PushforwardModel> {
    let manifest: ModelManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let blob = std::fs::read(dir.join("model.params"))?;
    load_model_from_parts(&manifest, &blob)
}

pub fn load_model_from_parts(manifest: &ModelManifest, blob: &[u8]) -> Result<PushforwardModel> {
    let found = checksum_hex(blob);
    if found != manifest.checksum {
        return Err(Error::Integrity(format!(
            "parameter checksum mismatch: manifest says {}, blob hashes to {found}",
            manifest.checksum
        )));
    }
    let params = blob_to_params(blob)?;
    if params.len() != manifest.param_count {
        return Err(Error::Integrity(format!(
            "manifest declares {} parameters, blob holds {}",
            manifest.param_count,
            params.len()
        )));
    }
    let mut model = PushforwardModel::from_manifest(manifest)?;
    model.restore_params(&params)?;
    Ok(model)
}
