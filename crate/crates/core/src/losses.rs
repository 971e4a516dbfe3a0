//! Supervised contrastive loss, multiclass cross-entropy and their blend.
//!
//! Each loss comes with its analytic gradient so the trainer can backpropagate without
//! an autodiff framework.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// How per-anchor contrastive terms are averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SclAverage {
    /// Mean over anchors that have at least one positive.
    #[default]
    PerAnchor,
    /// Mean over all (anchor, positive) pairs.
    PerPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the contrastive term, in [0, 1].
    pub lambda: f64,
    /// Temperature, > 0.
    pub tau: f64,
    /// L2-normalize embeddings before taking dot products.
    pub normalize_scl: bool,
    pub scl_average: SclAverage,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.7,
            tau: 0.1,
            normalize_scl: false,
            scl_average: SclAverage::PerAnchor,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// Labels of one batch with per-label counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLabels {
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
}

impl BatchLabels {
    pub fn new(labels: &[usize]) -> Self {
        let n = labels.iter().max().map_or(0, |&m| m + 1);
        let mut counts = vec![0; n];
        for &l in labels {
            counts[l] += 1;
        }
        BatchLabels {
            labels: labels.to_vec(),
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn positives(&self, i: usize) -> usize {
        self.counts[self.labels[i]] - 1
    }
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

fn l2_normalize<T: Scalar>(emb: ArrayView2<T>) -> (Array2<T>, Array1<T>) {
    let norms: Array1<T> = emb
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(T::lit(1e-12)))
        .collect();
    let mut out = emb.to_owned();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (out, norms)
}

/// Supervised contrastive loss with its gradient w.r.t. the embeddings.
///
/// Positives for anchor `i` are the other batch members sharing its label; the
/// denominator runs over every `k != i`. Anchors without positives are skipped.
pub fn scl_loss_grad<T: Scalar>(
    embeddings: ArrayView2<T>,
    labels: &BatchLabels,
    cfg: &LossConfig,
) -> (T, Array2<T>) {
    let n = embeddings.nrows();
    let mut grad = Array2::zeros(embeddings.raw_dim());
    if n < 2 {
        log::warn!("contrastive loss on a batch of {n}; returning zero");
        return (T::zero(), grad);
    }
    assert_eq!(labels.len(), n, "one label per embedding");
    let tau = T::lit(cfg.tau);
    let (z, norms) = if cfg.normalize_scl {
        let (z, norms) = l2_normalize(embeddings);
        (z, Some(norms))
    } else {
        (embeddings.to_owned(), None)
    };
    let sim = z.dot(&z.t()).mapv(|v| v / tau);

    let anchors = (0..n).filter(|&i| labels.positives(i) > 0).count();
    let pairs: usize = (0..n).map(|i| labels.positives(i)).sum();
    if anchors == 0 {
        return (T::zero(), grad);
    }
    let mut loss = T::zero();
    // d loss / d sim[i][k]
    let mut dsim = Array2::<T>::zeros((n, n));
    for i in 0..n {
        let p = labels.positives(i);
        if p == 0 {
            continue;
        }
        let others = (0..n).filter(move |&k| k != i);
        let lse = log_sum_exp(others.clone().map(|k| sim[[i, k]]));
        let mut term = T::zero();
        for j in others.clone() {
            if labels.labels[j] == labels.labels[i] {
                term += sim[[i, j]] - lse;
            }
        }
        let pf = T::from_count(p);
        let (scale, per_positive) = match cfg.scl_average {
            SclAverage::PerAnchor => (T::one() / T::from_count(anchors), T::one() / pf),
            SclAverage::PerPair => (T::one() / T::from_count(pairs), T::one()),
        };
        loss -= scale * per_positive * term;
        // sum over positives of (p_ik - 1[k = j]) collapses to p * p_ik - 1[k positive]
        for k in others {
            let prob = (sim[[i, k]] - lse).exp();
            let positive = if labels.labels[k] == labels.labels[i] {
                T::one()
            } else {
                T::zero()
            };
            dsim[[i, k]] += scale * per_positive * (pf * prob - positive);
        }
    }
    // sim = z z^T / tau  =>  dz = (dsim + dsim^T) z / tau
    let sym = &dsim + &dsim.t();
    let mut dz = sym.dot(&z).mapv(|v| v / tau);
    if let Some(norms) = norms {
        for ((mut dzr, zr), &nrm) in dz.rows_mut().into_iter().zip(z.rows()).zip(norms.iter()) {
            let proj = dzr.dot(&zr);
            for (d, &u) in dzr.iter_mut().zip(zr.iter()) {
                *d = (*d - u * proj) / nrm;
            }
        }
    }
    grad.assign(&dz);
    (loss, grad)
}

pub fn scl_loss<T: Scalar>(embeddings: ArrayView2<T>, labels: &BatchLabels, cfg: &LossConfig) -> T {
    scl_loss_grad(embeddings, labels, cfg).0
}

/// Mean softmax cross-entropy with its gradient w.r.t. the logits,
/// `(softmax - one_hot(gold)) / N`.
pub fn ce_loss_grad<T: Scalar>(logits: ArrayView2<T>, gold: &[usize]) -> (T, Array2<T>) {
    let n = logits.nrows();
    assert_eq!(gold.len(), n, "one gold label per row");
    let mut grad = Array2::zeros(logits.raw_dim());
    if n == 0 {
        return (T::zero(), grad);
    }
    let nf = T::from_count(n);
    let mut loss = T::zero();
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[gold[i]];
        for (c, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let onehot = if c == gold[i] { T::one() } else { T::zero() };
            grad[[i, c]] = (p - onehot) / nf;
        }
    }
    (loss / nf, grad)
}

pub fn ce_loss<T: Scalar>(logits: ArrayView2<T>, gold: &[usize]) -> T {
    ce_loss_grad(logits, gold).0
}

/// `(1 - lambda) * ce + lambda * scl`.
pub fn combined_loss<T: Scalar>(ce: T, scl: T, lambda: T) -> T {
    if lambda == T::zero() {
        return ce;
    }
    if lambda == T::one() {
        return scl;
    }
    (T::one() - lambda) * ce + lambda * scl
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &Array1<T>) -> Array1<T> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.mapv(|v| (v - lse).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Literal term enumeration over (i, j, k) with raw exponentials.
    fn scl_brute(h: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
        let n = h.nrows();
        let e = |m: usize, k: usize| (h.row(m).dot(&h.row(k)) / tau).exp();
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..n {
            let same = labels.iter().filter(|&&l| l == labels[i]).count();
            if same < 2 {
                continue;
            }
            anchors += 1;
            let mut inner = 0.0;
            for j in 0..n {
                if j == i || labels[j] != labels[i] {
                    continue;
                }
                let mut denom = 0.0;
                for k in 0..n {
                    if k != i {
                        denom += e(i, k);
                    }
                }
                inner += (e(i, j) / denom).ln();
            }
            total += -inner / (same as f64 - 1.0);
        }
        total / anchors as f64
    }

    fn fixture() -> (Array2<f64>, Vec<usize>) {
        (
            array![[0.3, 0.1, -0.2], [0.25, 0.05, -0.1], [-0.4, 0.2, 0.1]],
            vec![0, 0, 1],
        )
    }

    #[test]
    fn scl_trivial_cases() {
        let cfg = LossConfig::default();
        let same = array![[0.5, 0.5], [0.5, 0.5]];
        assert_eq!(scl_loss(same.view(), &BatchLabels::new(&[3, 3]), &cfg), 0.0);
        let diff = array![[0.5, 0.1], [0.2, 0.5]];
        assert_eq!(scl_loss(diff.view(), &BatchLabels::new(&[1, 2]), &cfg), 0.0);
        let single = array![[0.5, 0.1]];
        assert_eq!(scl_loss(single.view(), &BatchLabels::new(&[1]), &cfg), 0.0);
    }

    #[test]
    fn scl_matches_term_enumeration() {
        let (h, labels) = fixture();
        let got = scl_loss(h.view(), &BatchLabels::new(&labels), &LossConfig::default());
        let want = scl_brute(&h, &labels, 0.1);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn scl_monotone_in_positive_similarity() {
        let (mut h, labels) = fixture();
        let cfg = LossConfig::default();
        let before = scl_loss(h.view(), &BatchLabels::new(&labels), &cfg);
        // pull row 1 towards row 0
        let r0 = h.row(0).to_owned();
        h.row_mut(1).scaled_add(0.2, &r0);
        let after = scl_loss(h.view(), &BatchLabels::new(&labels), &cfg);
        assert!(after < before);
    }

    fn fd_check(cfg: LossConfig) {
        let (h, labels) = fixture();
        let bl = BatchLabels::new(&labels);
        let (_, grad) = scl_loss_grad(h.view(), &bl, &cfg);
        let eps = 1e-6;
        for idx in [[0, 0], [0, 2], [1, 1], [2, 0], [2, 2]] {
            let mut hp = h.clone();
            hp[idx] += eps;
            let mut hm = h.clone();
            hm[idx] -= eps;
            let fd = (scl_loss(hp.view(), &bl, &cfg) - scl_loss(hm.view(), &bl, &cfg)) / (2.0 * eps);
            assert!((fd - grad[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{idx:?}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn scl_gradient_matches_finite_differences() {
        fd_check(LossConfig::default());
        fd_check(LossConfig {
            normalize_scl: true,
            ..LossConfig::default()
        });
        fd_check(LossConfig {
            scl_average: SclAverage::PerPair,
            ..LossConfig::default()
        });
    }

    #[test]
    fn ce_closed_forms() {
        let uniform = Array2::<f64>::zeros((1, 24));
        assert!((ce_loss(uniform.view(), &[5]) - 24f64.ln()).abs() < 1e-10);
        let mut confident = Array2::<f64>::zeros((1, 24));
        confident[[0, 3]] = 50.0;
        assert!(ce_loss(confident.view(), &[3]) < 1e-15);
        // two-sample hand computation
        let logits = array![[1.0, 2.0, 0.0], [0.5, 0.5, 2.0]];
        let nll0 = -((1.0f64).exp() / (1.0f64.exp() + 2.0f64.exp() + 1.0)).ln();
        let nll1 = -(2.0f64.exp() / (2.0 * 0.5f64.exp() + 2.0f64.exp())).ln();
        let got = ce_loss(logits.view(), &[0, 2]);
        assert!((got - (nll0 + nll1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let logits: Array2<f64> = array![[1.0, 2.0, 0.0, -1.0], [0.5, 0.5, 2.0, 0.1]];
        let gold = [0, 2];
        let (_, grad) = ce_loss_grad(logits.view(), &gold);
        let eps = 1e-6;
        for i in 0..2 {
            for c in 0..4 {
                let mut p = logits.clone();
                p[[i, c]] += eps;
                let mut m = logits.clone();
                m[[i, c]] -= eps;
                let fd = (ce_loss(p.view(), &gold) - ce_loss(m.view(), &gold)) / (2.0 * eps);
                assert!((fd - grad[[i, c]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn combined_endpoints() {
        assert_eq!(combined_loss(1.3f64, 2.9, 0.0), 1.3);
        assert_eq!(combined_loss(1.3f64, 2.9, 1.0), 2.9);
        assert!((combined_loss(1.0f64, 2.0, 0.7) - 1.7).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossConfig { tau: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn works_in_f32() {
        let h = array![[0.3f32, 0.1], [0.25, 0.05], [-0.4, 0.2]];
        let l = scl_loss(h.view(), &BatchLabels::new(&[0, 0, 1]), &LossConfig::default());
        assert!(l.is_finite() && l > 0.0);
    }

    proptest! {
        #[test]
        fn scl_rotation_invariant(theta in 0.0f64..6.28, seed in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let h = Array2::from_shape_vec((4, 2), seed).unwrap();
            let (c, s) = (theta.cos(), theta.sin());
            let rot = array![[c, -s], [s, c]];
            let hr = h.dot(&rot);
            let bl = BatchLabels::new(&[0, 1, 0, 1]);
            let cfg = LossConfig::default();
            let a = scl_loss(h.view(), &bl, &cfg);
            let b = scl_loss(hr.view(), &bl, &cfg);
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn combined_affine_in_lambda(ce in 0.0f64..10.0, scl in 0.0f64..10.0, l in 0.0f64..1.0) {
            let mid = combined_loss(ce, scl, l);
            let expect = combined_loss(ce, scl, 0.0) + l * (combined_loss(ce, scl, 1.0) - combined_loss(ce, scl, 0.0));
            prop_assert!((mid - expect).abs() < 1e-12);
        }
    }
}
