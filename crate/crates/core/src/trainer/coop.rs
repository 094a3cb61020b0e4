//! All-to-all baseline: every agent sees its own encoding and the mean
//! encoding of all other agents.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::tensor::{relu_backward, relu_in_place};
use crate::nn::{
    encode_cached, encoder_backward, Affine, EncoderCache, Matrix, MlpParams, NetShape, NnError, Parameterized,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CoopNetwork {
    pub encoder: MlpParams,
    /// `2H -> H`, rectified.
    pub hidden: Affine,
    /// `H -> |A|`.
    pub out: Affine,
}

impl CoopNetwork {
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        Self {
            encoder: MlpParams::new(shape.inputs, shape.hidden, rng),
            hidden: Affine::new(2 * shape.hidden, shape.hidden, rng),
            out: Affine::new(shape.hidden, shape.actions, rng),
        }
    }

    pub fn zeros(shape: NetShape) -> Self {
        Self {
            encoder: MlpParams::zeros(shape.inputs, shape.hidden),
            hidden: Affine::zeros(2 * shape.hidden, shape.hidden),
            out: Affine::zeros(shape.hidden, shape.actions),
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            inputs: self.encoder.l1.inputs(),
            hidden: self.encoder.l2.outputs(),
            heads: 1,
            actions: self.out.outputs(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub(crate) fn forward_cached<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<CoopCache, NnError> {
        if features.is_empty() {
            return Err(NnError::EmptyGraph);
        }
        let n = features.len();
        let enc = features.iter().map(|f| encode_cached(f.as_ref(), &self.encoder)).collect::<Result<Vec<_>, _>>()?;
        let width = self.encoder.l2.outputs();
        let mut sum = vec![0.0; width];
        for c in &enc {
            sum.iter_mut().zip(&c.out).for_each(|(s, x)| *s += x);
        }
        let mut z = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for c in &enc {
            let others: Vec<f64> = if n > 1 {
                sum.iter().zip(&c.out).map(|(s, x)| (s - x) / (n - 1) as f64).collect()
            } else {
                vec![0.0; width]
            };
            let zi = [c.out.as_slice(), &others].concat();
            let p = self.hidden.apply(&zi);
            let mut hi = p.clone();
            relu_in_place(&mut hi);
            q.push(self.out.apply(&hi));
            z.push(zi);
            pre.push(p);
            h.push(hi);
        }
        Ok(CoopCache { enc, z, pre, h, q })
    }

    pub(crate) fn backward_cached(
        &self,
        cache: &CoopCache,
        dq: &[Vec<f64>],
        grads: &mut CoopNetwork,
    ) -> Result<(), NnError> {
        let n = cache.q.len();
        if dq.len() != n {
            return Err(NnError::ShapeMismatch { what: "dq", expected: n, got: dq.len() });
        }
        let width = self.encoder.l2.outputs();
        let mut de = vec![vec![0.0; width]; n];
        let mut others_grad = vec![0.0; width];
        for i in 0..n {
            let mut dh = vec![0.0; width];
            self.out.backward(&cache.h[i], &dq[i], &mut grads.out, &mut dh);
            relu_backward(&cache.pre[i], &mut dh);
            let mut dz = vec![0.0; 2 * width];
            self.hidden.backward(&cache.z[i], &dh, &mut grads.hidden, &mut dz);
            de[i].iter_mut().zip(&dz[..width]).for_each(|(a, b)| *a += b);
            if n > 1 {
                // d(mean of others)/d e_j = 1/(n-1) for every j != i
                let inv = 1.0 / (n - 1) as f64;
                for (g, d) in others_grad.iter_mut().zip(&dz[width..]) {
                    *g += d * inv;
                }
                de[i].iter_mut().zip(&dz[width..]).for_each(|(a, b)| *a -= b * inv);
            }
        }
        for (c, d) in cache.enc.iter().zip(&mut de) {
            d.iter_mut().zip(&others_grad).for_each(|(a, b)| *a += b);
            encoder_backward(&self.encoder, c, d, &mut grads.encoder);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CoopCache {
    enc: Vec<EncoderCache>,
    z: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    pub(crate) q: Vec<Vec<f64>>,
}

impl Parameterized for CoopNetwork {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.encoder.push_tensors("encoder", &mut out);
        out.push((String::from("hidden.weight"), &self.hidden.weight));
        out.push((String::from("hidden.bias"), &self.hidden.bias));
        out.push((String::from("out.weight"), &self.out.weight));
        out.push((String::from("out.bias"), &self.out.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        self.encoder.push_tensors_mut(&mut out);
        out.extend([&mut self.hidden.weight, &mut self.hidden.bias, &mut self.out.weight, &mut self.out.bias]);
        out
    }
}

/// Q values of every agent under the all-to-all baseline.
pub fn coop_forward<F: AsRef<[f64]>>(features: &[F], net: &CoopNetwork) -> Result<Vec<Vec<f64>>, NnError> {
    net.forward_cached(features).map(|c| c.q)
}
