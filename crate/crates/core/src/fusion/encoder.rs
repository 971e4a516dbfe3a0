use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::EncoderOutput;
use crate::Scalar;

/// Per-token contextual states of fixed dimension.
pub trait Encoder<T: Scalar> {
    fn dim(&self) -> usize;
    fn encode(&self, ids: &[u32], valid: &[bool]) -> Result<EncoderOutput<T>>;
}

/// Small bidirectional encoder for tests and desk-scale runs:
/// `h_i = tanh(W_self e_i + W_ctx c_i + b)` where `c_i` averages the embeddings of the
/// valid tokens within `window` positions of `i`, excluding `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ContextEncoder<T> {
    /// `vocab x d`.
    pub embeddings: Array2<T>,
    pub w_self: Array2<T>,
    pub w_ctx: Array2<T>,
    pub bias: Array1<T>,
    pub window: usize,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    ids: Vec<u32>,
    valid: Vec<bool>,
    context: Array2<T>,
    states: Array2<T>,
    neighbors: Vec<Vec<usize>>,
}

impl<T> EncoderCache<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl<T: Scalar> ContextEncoder<T> {
    /// Random init; marker rows start at the mean of the other embeddings plus small noise.
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, window: usize, marker_ids: &[u32], rng: &mut R) -> Self {
        let emb_dist = Normal::new(0.0, 1.0).expect("finite std");
        let w_dist = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("finite std");
        let mut embeddings = Array2::from_shape_fn((vocab, dim), |_| T::lit(emb_dist.sample(rng)));
        let others: Vec<usize> = (0..vocab).filter(|i| !marker_ids.contains(&(*i as u32))).collect();
        if !others.is_empty() {
            let mut mean = Array1::<T>::zeros(dim);
            for &i in &others {
                mean += &embeddings.row(i);
            }
            mean /= T::from_count(others.len());
            let noise = Normal::new(0.0, 0.02).expect("finite std");
            for &m in marker_ids {
                let mut row = embeddings.row_mut(m as usize);
                for (v, &mu) in row.iter_mut().zip(mean.iter()) {
                    *v = mu + T::lit(noise.sample(rng));
                }
            }
        }
        ContextEncoder {
            embeddings,
            w_self: Array2::from_shape_fn((dim, dim), |_| T::lit(w_dist.sample(rng))),
            w_ctx: Array2::from_shape_fn((dim, dim), |_| T::lit(w_dist.sample(rng))),
            bias: Array1::zeros(dim),
            window,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ContextEncoder {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            w_self: Array2::zeros(self.w_self.raw_dim()),
            w_ctx: Array2::zeros(self.w_ctx.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            window: self.window,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn forward(&self, ids: &[u32], valid: &[bool]) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        if ids.len() != valid.len() {
            return Err(Error::Contract(format!("{} ids but {} validity bits", ids.len(), valid.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab_size()) {
            return Err(Error::Contract(format!("token id {bad} outside vocabulary of {}", self.vocab_size())));
        }
        let n = ids.len();
        let d = self.dim();
        let mut context = Array2::zeros((n, d));
        let mut neighbors = vec![Vec::new(); n];
        for i in (0..n).filter(|&i| valid[i]) {
            let lo = i.saturating_sub(self.window);
            let hi = (i + self.window).min(n - 1);
            let nb: Vec<usize> = (lo..=hi).filter(|&j| j != i && valid[j]).collect();
            if !nb.is_empty() {
                let mut row = context.row_mut(i);
                for &j in &nb {
                    row += &self.embeddings.row(ids[j] as usize);
                }
                row /= T::from_count(nb.len());
            }
            neighbors[i] = nb;
        }
        let mut states = Array2::zeros((n, d));
        for i in (0..n).filter(|&i| valid[i]) {
            let e = self.embeddings.row(ids[i] as usize);
            let z = self.w_self.dot(&e) + self.w_ctx.dot(&context.row(i)) + &self.bias;
            states.row_mut(i).assign(&z.mapv(T::tanh));
        }
        let out = EncoderOutput {
            states: states.clone(),
            valid: valid.to_vec(),
        };
        let cache = EncoderCache {
            ids: ids.to_vec(),
            valid: valid.to_vec(),
            context,
            states,
            neighbors,
        };
        Ok((out, cache))
    }

    /// Accumulate parameter gradients given the gradient on the output states.
    pub fn backward(&self, cache: &EncoderCache<T>, d_states: &Array2<T>, grads: &mut ContextEncoder<T>) {
        for i in (0..cache.len()).filter(|&i| cache.valid[i]) {
            let h = cache.states.row(i);
            let dz: Array1<T> = d_states
                .row(i)
                .iter()
                .zip(h.iter())
                .map(|(&g, &hv)| g * (T::one() - hv * hv))
                .collect();
            if dz.iter().all(|v| v.is_zero()) {
                continue;
            }
            let e = self.embeddings.row(cache.ids[i] as usize);
            let c = cache.context.row(i);
            for (r, &g) in dz.iter().enumerate() {
                grads.w_self.row_mut(r).scaled_add(g, &e);
                grads.w_ctx.row_mut(r).scaled_add(g, &c);
            }
            grads.bias += &dz;
            let de = self.w_self.t().dot(&dz);
            grads.embeddings.row_mut(cache.ids[i] as usize).scaled_add(T::one(), &de);
            let nb = &cache.neighbors[i];
            if !nb.is_empty() {
                let dc = self.w_ctx.t().dot(&dz) / T::from_count(nb.len());
                for &j in nb {
                    grads.embeddings.row_mut(cache.ids[j] as usize).scaled_add(T::one(), &dc);
                }
            }
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.embeddings.as_slice_mut().expect("standard layout"),
            self.w_self.as_slice_mut().expect("standard layout"),
            self.w_ctx.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl<T: Scalar> Encoder<T> for ContextEncoder<T> {
    fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn encode(&self, ids: &[u32], valid: &[bool]) -> Result<EncoderOutput<T>> {
        Ok(self.forward(ids, valid)?.0)
    }
}
