//! Masked mean pooling over the trajectory subgraph fused with max pooling over the
//! sentence, followed by a single affine classifier.

mod checkpoint;
mod encoder;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint_manifest, save_checkpoint, Checkpoint, CheckpointManifest};
pub use encoder::{ContextEncoder, Encoder, EncoderCache};
pub use optim::{AdamW, AdamWConfig};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::syntax_graph::MaskVector;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<T> {
    /// `padded_length x d`.
    pub states: Array2<T>,
    /// False on padding rows.
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput<T> {
    pub h1_prime: Array1<T>,
    pub h2: Array1<T>,
    pub h_scl: Array1<T>,
    pub logits: Array1<T>,
}

/// Whether the subgraph branch contributes. `NoTriple` zeroes the masked mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    Full,
    NoTriple,
}

/// Pooled vectors with what backprop needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled<T> {
    pub h1_prime: Array1<T>,
    pub h2: Array1<T>,
    /// Rows averaged into `h1_prime`; empty under `NoTriple`.
    pub mask_rows: Vec<usize>,
    /// Row that won the max for each dimension.
    pub argmax: Vec<usize>,
}

impl<T: Scalar> Pooled<T> {
    pub fn h_scl(&self) -> Array1<T> {
        ndarray::concatenate![ndarray::Axis(0), self.h1_prime, self.h2]
    }
}

/// Mean of the mask-selected rows and max over the valid rows.
pub fn pool<T: Scalar>(out: &EncoderOutput<T>, mask: &MaskVector, mode: FusionMode) -> Result<Pooled<T>> {
    let (n, d) = out.states.dim();
    if out.valid.len() != n {
        return Err(Error::Contract(format!(
            "validity length {} for {n} rows",
            out.valid.len()
        )));
    }
    if mask.len() != n {
        return Err(Error::Contract(format!("mask length {} for padded length {n}", mask.len())));
    }
    if let Some(i) = mask.support().find(|&i| !out.valid[i]) {
        return Err(Error::Contract(format!("mask selects padding row {i}")));
    }
    let valid_rows: Vec<usize> = (0..n).filter(|&i| out.valid[i]).collect();
    if valid_rows.is_empty() {
        return Err(Error::Contract("no valid rows to pool".into()));
    }

    let (h1_prime, mask_rows) = match mode {
        FusionMode::NoTriple => (Array1::zeros(d), Vec::new()),
        FusionMode::Full => {
            let rows: Vec<usize> = mask.support().collect();
            if rows.is_empty() {
                return Err(Error::Contract("all-zero mask; apply the entity fallback first".into()));
            }
            let mut sum = Array1::zeros(d);
            for &r in &rows {
                sum += &out.states.row(r);
            }
            (sum / T::from_count(rows.len()), rows)
        }
    };

    let mut h2 = out.states.row(valid_rows[0]).to_owned();
    let mut argmax = vec![valid_rows[0]; d];
    for &r in &valid_rows[1..] {
        for (k, &v) in out.states.row(r).iter().enumerate() {
            if v > h2[k] {
                h2[k] = v;
                argmax[k] = r;
            }
        }
    }
    Ok(Pooled {
        h1_prime,
        h2,
        mask_rows,
        argmax,
    })
}

/// Gradient of the pooled `h_scl` w.r.t. the encoder states.
pub fn pool_backward<T: Scalar>(pooled: &Pooled<T>, d_h_scl: ArrayView1<T>, rows: usize) -> Array2<T> {
    let d = pooled.h2.len();
    let mut grad = Array2::zeros((rows, d));
    if !pooled.mask_rows.is_empty() {
        let share = d_h_scl.slice(s![..d]).mapv(|v| v / T::from_count(pooled.mask_rows.len()));
        for &r in &pooled.mask_rows {
            grad.row_mut(r).assign(&share);
        }
    }
    for (k, &r) in pooled.argmax.iter().enumerate() {
        grad[[r, k]] += d_h_scl[d + k];
    }
    grad
}

/// One affine layer from `h_scl` to class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Classifier<T> {
    /// `classes x 2d`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(classes: usize, input_dim: usize, rng: &mut R) -> Self {
        let std = (1.0 / input_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Classifier {
            weight: Array2::from_shape_fn((classes, input_dim), |_| T::lit(normal.sample(rng))),
            bias: Array1::zeros(classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Classifier {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn logits(&self, h_scl: ArrayView1<T>) -> Array1<T> {
        self.weight.dot(&h_scl) + &self.bias
    }

    /// Accumulate parameter gradients into `grads`; returns the gradient w.r.t. `h_scl`.
    pub fn backward(&self, h_scl: ArrayView1<T>, d_logits: ArrayView1<T>, grads: &mut Classifier<T>) -> Array1<T> {
        for (c, &g) in d_logits.iter().enumerate() {
            grads.weight.row_mut(c).scaled_add(g, &h_scl);
        }
        grads.bias += &d_logits;
        self.weight.t().dot(&d_logits)
    }
}

/// Full trainable model: context encoder plus classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FusionModel<T> {
    pub encoder: ContextEncoder<T>,
    pub classifier: Classifier<T>,
}

/// Everything from one forward pass needed to backpropagate.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub output: FusionOutput<T>,
    pub pooled: Pooled<T>,
    pub cache: EncoderCache<T>,
}

impl<T: Scalar> FusionModel<T> {
    pub fn new<R: Rng + ?Sized>(
        vocab_size: usize,
        dim: usize,
        window: usize,
        classes: usize,
        marker_ids: &[u32],
        rng: &mut R,
    ) -> Self {
        let encoder = ContextEncoder::new(vocab_size, dim, window, marker_ids, rng);
        let classifier = Classifier::new(classes, 2 * dim, rng);
        FusionModel { encoder, classifier }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn zeros_like(&self) -> Self {
        FusionModel {
            encoder: self.encoder.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn forward_traced(&self, ids: &[u32], valid: &[bool], mask: &MaskVector, mode: FusionMode) -> Result<ForwardTrace<T>> {
        let (enc, cache) = self.encoder.forward(ids, valid)?;
        let pooled = pool(&enc, mask, mode)?;
        let h_scl = pooled.h_scl();
        let logits = self.classifier.logits(h_scl.view());
        Ok(ForwardTrace {
            output: FusionOutput {
                h1_prime: pooled.h1_prime.clone(),
                h2: pooled.h2.clone(),
                h_scl,
                logits,
            },
            pooled,
            cache,
        })
    }

    pub fn forward(&self, ids: &[u32], valid: &[bool], mask: &MaskVector, mode: FusionMode) -> Result<FusionOutput<T>> {
        Ok(self.forward_traced(ids, valid, mask, mode)?.output)
    }

    /// Backpropagate from gradients on the logits and directly on `h_scl`.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_logits: ArrayView1<T>, d_h_scl: ArrayView1<T>, grads: &mut FusionModel<T>) {
        let mut dh = self
            .classifier
            .backward(trace.output.h_scl.view(), d_logits, &mut grads.classifier);
        dh += &d_h_scl;
        let d_states = pool_backward(&trace.pooled, dh.view(), trace.cache.len());
        self.encoder.backward(&trace.cache, &d_states, &mut grads.encoder);
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.encoder.param_slices_mut();
        out.push(self.classifier.weight.as_slice_mut().expect("standard layout"));
        out.push(self.classifier.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn all_finite(&mut self) -> bool {
        self.param_slices_mut().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Predicted class and probability vector. Ties go to the lowest class id.
pub fn predict_from_logits<T: Scalar>(logits: &Array1<T>) -> (usize, Array1<T>) {
    let probs = softmax(logits);
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(bits: &[u8]) -> MaskVector {
        MaskVector { bits: bits.to_vec() }
    }

    fn out(states: Array2<f64>) -> EncoderOutput<f64> {
        let n = states.nrows();
        EncoderOutput {
            states,
            valid: vec![true; n],
        }
    }

    #[test]
    fn pooling_arithmetic() {
        let o = out(array![[1.0, 3.0], [5.0, 7.0], [9.0, 11.0]]);
        let p = pool(&o, &mask(&[1, 0, 1]), FusionMode::Full).unwrap();
        assert_eq!(p.h1_prime, array![5.0, 7.0]);
        assert_eq!(p.h2, array![9.0, 11.0]);
        assert_eq!(p.h_scl(), array![5.0, 7.0, 9.0, 11.0]);

        let all = pool(&o, &mask(&[1, 1, 1]), FusionMode::Full).unwrap();
        assert_eq!(all.h1_prime, array![5.0, 7.0]);

        let single = EncoderOutput {
            states: array![[2.0, -1.0], [0.0, 0.0]],
            valid: vec![true, false],
        };
        let p = pool(&single, &mask(&[1, 0]), FusionMode::Full).unwrap();
        assert_eq!(p.h1_prime, p.h2);
        assert_eq!(p.h2, array![2.0, -1.0]);
    }

    #[test]
    fn padding_is_excluded_from_max() {
        let o = EncoderOutput {
            states: array![[-1.0, -2.0], [100.0, 100.0]],
            valid: vec![true, false],
        };
        let p = pool(&o, &mask(&[1, 0]), FusionMode::Full).unwrap();
        assert_eq!(p.h2, array![-1.0, -2.0]);
    }

    #[test]
    fn contract_violations() {
        let o = out(array![[1.0], [2.0]]);
        assert!(matches!(pool(&o, &mask(&[0, 0]), FusionMode::Full), Err(Error::Contract(_))));
        assert!(matches!(pool(&o, &mask(&[1]), FusionMode::Full), Err(Error::Contract(_))));
        let padded = EncoderOutput {
            states: array![[1.0], [2.0]],
            valid: vec![true, false],
        };
        assert!(matches!(pool(&padded, &mask(&[1, 1]), FusionMode::Full), Err(Error::Contract(_))));
    }

    #[test]
    fn no_triple_zeroes_mean_only() {
        let o = out(array![[1.0, 3.0], [5.0, 7.0], [9.0, 11.0]]);
        let full = pool(&o, &mask(&[1, 0, 1]), FusionMode::Full).unwrap();
        let ablated = pool(&o, &mask(&[1, 0, 1]), FusionMode::NoTriple).unwrap();
        assert_eq!(ablated.h1_prime, array![0.0, 0.0]);
        assert_eq!(ablated.h2, full.h2);
        assert_eq!(ablated.h_scl().len(), 4);
    }

    #[test]
    fn predict_ties_and_limits() {
        let (c, p) = predict_from_logits(&Array1::<f64>::zeros(24));
        assert_eq!(c, 0);
        assert!((p.sum() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&x| (x - 1.0 / 24.0).abs() < 1e-12));
        let mut l = Array1::<f64>::zeros(24);
        l[7] = 1e3;
        let (c, p) = predict_from_logits(&l);
        assert_eq!(c, 7);
        assert!((p[7] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states = array![[0.2, -0.4, 0.1, 0.7], [0.5, 0.3, -0.6, 0.05]];
        let o = out(states);
        let p = pool(&o, &mask(&[1, 1]), FusionMode::Full).unwrap();
        let h = p.h_scl();
        let clf = Classifier::<f64>::new(24, 8, &mut rng);
        // scalar objective: a fixed random projection of the logits
        let proj = Array1::from_shape_fn(24, |i| ((i * 7 % 11) as f64 - 5.0) / 5.0);
        let mut grads = clf.zeros_like();
        clf.backward(h.view(), proj.view(), &mut grads);
        let eps = 1e-6;
        for (c, k) in [(0, 0), (3, 5), (23, 7), (12, 2)] {
            let mut plus = clf.clone();
            plus.weight[[c, k]] += eps;
            let mut minus = clf.clone();
            minus.weight[[c, k]] -= eps;
            let fd = (plus.logits(h.view()).dot(&proj) - minus.logits(h.view()).dot(&proj)) / (2.0 * eps);
            let an = grads.weight[[c, k]];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = FusionModel::<f64>::new(12, 4, 1, 5, &[10, 11], &mut rng);
        let ids = [1u32, 10, 4, 11, 7, 0];
        let valid = [true, true, true, true, true, false];
        let m = mask(&[0, 1, 1, 1, 0, 0]);
        let proj = array![0.3, -1.0, 0.5, 0.2, -0.4];
        let objective = |mdl: &FusionModel<f64>| {
            mdl.forward(&ids, &valid, &m, FusionMode::Full).unwrap().logits.dot(&proj)
        };
        let trace = model.forward_traced(&ids, &valid, &m, FusionMode::Full).unwrap();
        let mut grads = model.zeros_like();
        model.backward(&trace, proj.view(), Array1::zeros(8).view(), &mut grads);

        let mut g = grads.clone();
        let analytic: Vec<Vec<f64>> = g.param_slices_mut().iter().map(|s| s.to_vec()).collect();
        let eps = 1e-6;
        for (t, an) in analytic.iter().enumerate() {
            for idx in (0..an.len()).step_by(5) {
                let mut plus = model.clone();
                plus.param_slices_mut()[t][idx] += eps;
                let mut minus = model.clone();
                minus.param_slices_mut()[t][idx] -= eps;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                assert!((fd - an[idx]).abs() < 1e-6 + 1e-4 * fd.abs(), "tensor {t} idx {idx}: {fd} vs {}", an[idx]);
            }
        }
    }

    proptest! {
        #[test]
        fn masked_mean_is_linear(c in -5.0f64..5.0, vals in proptest::collection::vec(-3.0f64..3.0, 8)) {
            let states = Array2::from_shape_vec((4, 2), vals).unwrap();
            let m = mask(&[1, 0, 1, 1]);
            let base = pool(&out(states.clone()), &m, FusionMode::Full).unwrap();
            let mut scaled = states;
            for r in [0, 2, 3] {
                scaled.row_mut(r).mapv_inplace(|v| v * c);
            }
            let p = pool(&out(scaled), &m, FusionMode::Full).unwrap();
            for k in 0..2 {
                prop_assert!((p.h1_prime[k] - c * base.h1_prime[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn permuting_rows_outside_mask_is_invariant(vals in proptest::collection::vec(-3.0f64..3.0, 10)) {
            let states = Array2::from_shape_vec((5, 2), vals).unwrap();
            let m = mask(&[1, 0, 1, 0, 0]);
            let base = pool(&out(states.clone()), &m, FusionMode::Full).unwrap();
            let mut perm = states.clone();
            perm.row_mut(1).assign(&states.row(4));
            perm.row_mut(3).assign(&states.row(1));
            perm.row_mut(4).assign(&states.row(3));
            let p = pool(&out(perm), &m, FusionMode::Full).unwrap();
            prop_assert_eq!(p.h1_prime, base.h1_prime);
            prop_assert_eq!(p.h2, base.h2);
        }
    }
}
