//! Synthetic datasets with known intrinsic dimensions, including unions
//! of components whose dimensions differ.
//!
//! Three constructions:
//!
//! * affine manifolds — uniform latents pushed through a random orthonormal
//!   frame, optionally with isotropic Gaussian noise;
//! * pushforward manifolds — Gaussian latents with all but the first m
//!   coordinates zeroed, mapped through a fixed random two-hidden-layer tanh
//!   network, so the image has intrinsic dimension (at most, and generically
//!   exactly) m;
//! * unions — components translated apart until a requested minimum
//!   inter-component gap holds, then concatenated with component labels.
//!
//! Everything is driven by the documented counter PRNG: the same seed gives
//! bit-identical datasets. Per-component streams are derived with the
//! generator's split rule.

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::knn::nn_distance_to_set;
use crate::rng::Rng;

/// Ground truth for one synthetic component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTruth {
    /// True intrinsic dimension by construction.
    pub dim: usize,
    pub kind: String,
    pub seed: u64,
    pub n: usize,
}

/// Ground truth for a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub components: Vec<ComponentTruth>,
    /// Requested minimum inter-component distance, when composed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    /// Verified minimum inter-component distance actually achieved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gap_achieved: Option<f64>,
}

impl SyntheticTruth {
    fn single(dim: usize, kind: &str, seed: u64, n: usize) -> Self {
        SyntheticTruth {
            components: vec![ComponentTruth { dim, kind: kind.into(), seed, n }],
            gap: None,
            min_gap_achieved: None,
        }
    }
}

/// Uniform samples on a d-dimensional unit cube pushed through a random
/// orthonormal D x d frame, plus an offset and optional isotropic noise.
pub fn gen_affine_manifold(
    n: usize,
    d: usize,
    ambient: usize,
    seed: u64,
    noise_sigma: f64,
) -> Result<(DataMatrix<f64>, SyntheticTruth)> {
    if d < 1 || d > ambient {
        return Err(Error::Argument(format!(
            "latent dimension {d} must be in 1..={ambient}"
        )));
    }
    if noise_sigma < 0.0 {
        return Err(Error::Argument("noise sigma must be non-negative".into()));
    }
    let mut rng = Rng::new(seed);
    let frame = random_orthonormal_frame(&mut rng, ambient, d);
    let offset: Vec<f64> = (0..ambient).map(|_| rng.next_normal()).collect();

    let mut values = vec![0.0f64; n * ambient];
    let mut latent = vec![0.0f64; d];
    for i in 0..n {
        for z in latent.iter_mut() {
            *z = rng.next_f64();
        }
        let row = &mut values[i * ambient..(i + 1) * ambient];
        for (a, out) in row.iter_mut().enumerate() {
            let mut acc = offset[a];
            for (j, z) in latent.iter().enumerate() {
                acc += frame[a * d + j] * z;
            }
            *out = acc;
        }
        if noise_sigma > 0.0 {
            for out in row.iter_mut() {
                *out += noise_sigma * rng.next_normal();
            }
        }
    }
    let x = DataMatrix::new(n, ambient, values)?;
    Ok((x, SyntheticTruth::single(d, "affine", seed, n)))
}

/// Columns of a random Gaussian D x d matrix orthonormalized by modified
/// Gram-Schmidt. Row-major D x d.
pub fn random_orthonormal_frame(rng: &mut Rng, ambient: usize, d: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..ambient).map(|_| rng.next_normal()).collect())
        .collect();
    for j in 0..d {
        for prev in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[prev]).map(|(a, b)| a * b).sum();
            let prev_col = cols[prev].clone();
            for (v, p) in cols[j].iter_mut().zip(&prev_col) {
                *v -= dot * p;
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut frame = vec![0.0; ambient * d];
    for (j, col) in cols.iter().enumerate() {
        for (a, v) in col.iter().enumerate() {
            frame[a * d + j] = *v;
        }
    }
    frame
}

/// Fixed random two-hidden-layer tanh network used as a smooth generator.
#[derive(Debug, Clone)]
pub struct RandomSmoothMap {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
    /// Latent coordinates beyond this count are zeroed before the map.
    pub active_coords: usize,
}

impl RandomSmoothMap {
    pub fn new(input_dim: usize, output_dim: usize, hidden: usize, active: usize, rng: &mut Rng) -> Self {
        let draw = |rng: &mut Rng, rows: usize, cols: usize| -> Vec<f64> {
            let std = (1.0 / cols as f64).sqrt();
            (0..rows * cols).map(|_| std * rng.next_normal()).collect()
        };
        let w1 = draw(rng, hidden, input_dim);
        let b1 = vec![0.0; hidden];
        let w2 = draw(rng, hidden, hidden);
        let b2 = vec![0.0; hidden];
        let w3 = draw(rng, output_dim, hidden);
        let b3 = vec![0.0; output_dim];
        RandomSmoothMap {
            input_dim,
            output_dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            active_coords: active,
        }
    }

    /// Apply the map, including the zero-masking of inactive coordinates.
    pub fn apply(&self, latent: &[f64], out: &mut [f64]) {
        debug_assert_eq!(latent.len(), self.input_dim);
        debug_assert_eq!(out.len(), self.output_dim);
        let mut masked = latent.to_vec();
        for z in masked.iter_mut().skip(self.active_coords) {
            *z = 0.0;
        }
        let mut h1 = vec![0.0; self.hidden];
        for (r, h) in h1.iter_mut().enumerate() {
            let mut acc = self.b1[r];
            for (c, z) in masked.iter().enumerate() {
                acc += self.w1[r * self.input_dim + c] * z;
            }
            *h = acc.tanh();
        }
        let mut h2 = vec![0.0; self.hidden];
        for (r, h) in h2.iter_mut().enumerate() {
            let mut acc = self.b2[r];
            for (c, z) in h1.iter().enumerate() {
                acc += self.w2[r * self.hidden + c] * z;
            }
            *h = acc.tanh();
        }
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = self.b3[r];
            for (c, z) in h2.iter().enumerate() {
                acc += self.w3[r * self.hidden + c] * z;
            }
            *o = acc;
        }
    }
}

pub const SMOOTH_MAP_HIDDEN: usize = 64;

/// Gaussian latents with all but the first `m` coordinates zeroed, pushed
/// through a fixed random smooth network; true intrinsic dimension is m.
pub fn gen_pushforward_manifold(
    n: usize,
    d_latent: usize,
    m: usize,
    ambient: usize,
    seed: u64,
) -> Result<(DataMatrix<f64>, SyntheticTruth)> {
    gen_pushforward_manifold_with(n, d_latent, m, ambient, seed).map(|(x, t, _)| (x, t))
}

/// Like [`gen_pushforward_manifold`] but also returns the generator map,
/// for Jacobian-rank checks.
pub fn gen_pushforward_manifold_with(
    n: usize,
    d_latent: usize,
    m: usize,
    ambient: usize,
    seed: u64,
) -> Result<(DataMatrix<f64>, SyntheticTruth, RandomSmoothMap)> {
    if d_latent < 1 || d_latent > ambient {
        return Err(Error::Argument(format!(
            "latent dimension {d_latent} must be in 1..={ambient}"
        )));
    }
    if m > d_latent {
        return Err(Error::Argument(format!(
            "active coordinate count {m} exceeds latent dimension {d_latent}"
        )));
    }
    let mut rng = Rng::new(seed);
    let map = RandomSmoothMap::new(d_latent, ambient, SMOOTH_MAP_HIDDEN, m, &mut rng);
    let mut values = vec![0.0f64; n * ambient];
    let mut latent = vec![0.0f64; d_latent];
    for i in 0..n {
        rng.fill_normal(&mut latent);
        map.apply(&latent, &mut values[i * ambient..(i + 1) * ambient]);
    }
    let x = DataMatrix::new(n, ambient, values)?;
    Ok((x, SyntheticTruth::single(m, "pushforward", seed, n), map))
}

const PLACEMENT_ATTEMPTS: usize = 64;

/// Translate components apart until every inter-component distance is at
/// least `gap`, concatenate, and label rows by component id.
pub fn compose_union(
    components: &[(DataMatrix<f64>, SyntheticTruth)],
    gap: f64,
    seed: u64,
) -> Result<(DataMatrix<f64>, SyntheticTruth)> {
    if components.is_empty() {
        return Err(Error::Argument("need at least one component".into()));
    }
    if gap < 0.0 {
        return Err(Error::Argument("gap must be non-negative".into()));
    }
    let dim = components[0].0.dim();
    for (c, _) in components.iter().skip(1) {
        if c.dim() != dim {
            return Err(Error::Argument(format!(
                "all components must share one ambient dimension; saw {} and {}",
                dim,
                c.dim()
            )));
        }
    }

    let root = Rng::new(seed);
    let mut placed: Vec<DataMatrix<f64>> = vec![components[0].0.clone()];
    let mut min_gap_achieved = f64::INFINITY;
    for (c, (comp, _)) in components.iter().enumerate().skip(1) {
        let mut rng = root.substream(c as u64);
        let mut direction: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in direction.iter_mut() {
            *v /= norm;
        }
        let mut shift = gap.max(1.0);
        let mut placed_ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let translated = translate(comp, &direction, shift);
            let worst = min_distance_to_all(&translated, &placed)?;
            if worst >= gap {
                placed_ok = Some((translated, worst));
                break;
            }
            shift *= 2.0;
        }
        match placed_ok {
            Some((translated, worst)) => {
                min_gap_achieved = min_gap_achieved.min(worst);
                placed.push(translated);
            }
            None => {
                return Err(Error::Placement(format!(
                    "component {c} could not be moved at least {gap} away within {PLACEMENT_ATTEMPTS} attempts"
                )))
            }
        }
    }

    let n_total: usize = placed.iter().map(|c| c.n()).sum();
    let mut values = Vec::with_capacity(n_total * dim);
    let mut labels = Vec::with_capacity(n_total);
    for (c, comp) in placed.iter().enumerate() {
        values.extend_from_slice(comp.values());
        labels.extend(std::iter::repeat(c).take(comp.n()));
    }
    let x = DataMatrix::new(n_total, dim, values)?.with_labels(labels)?;
    let truth = SyntheticTruth {
        components: components.iter().flat_map(|(_, t)| t.components.clone()).collect(),
        gap: Some(gap),
        min_gap_achieved: if components.len() > 1 {
            Some(min_gap_achieved)
        } else {
            None
        },
    };
    Ok((x, truth))
}

fn translate(x: &DataMatrix<f64>, direction: &[f64], shift: f64) -> DataMatrix<f64> {
    let dim = x.dim();
    let mut values = x.values().to_vec();
    for row in values.chunks_exact_mut(dim) {
        for (v, d) in row.iter_mut().zip(direction) {
            *v += shift * d;
        }
    }
    DataMatrix::new(x.n(), dim, values).expect("translation preserves finiteness")
}

fn min_distance_to_all(x: &DataMatrix<f64>, others: &[DataMatrix<f64>]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for other in others {
        let d = nn_distance_to_set(x, other, 1)?;
        best = best.min(d.into_iter().fold(f64::INFINITY, f64::min));
    }
    Ok(best)
}
