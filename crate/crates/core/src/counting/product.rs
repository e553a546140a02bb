use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::sources::SampleStream;

/// Membership oracle for a chain `A_0 ⊇ A_1 ⊇ … ⊇ A_k`.
pub trait LevelSampler {
    /// Number of ratios `k`.
    fn levels(&self) -> usize;

    /// Draws a uniform element of `A_level` and reports whether it lies in
    /// `A_{level+1}`.
    fn draw_member(&self, level: usize, rng: &mut dyn RngCore) -> bool;
}

/// Chain whose level `i` keeps a fraction `ratios[i]` of its elements.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliChain {
    pub ratios: Vec<f64>,
}

impl LevelSampler for BernoulliChain {
    fn levels(&self) -> usize {
        self.ratios.len()
    }

    fn draw_member(&self, level: usize, rng: &mut dyn RngCore) -> bool {
        rng.random::<f64>() < self.ratios[level]
    }
}

#[derive(Debug, Clone)]
pub struct NestedChain<L> {
    pub sampler: L,
    /// `#A_k`
    pub known_terminal: f64,
    /// Every ratio `#A_{i+1}/#A_i` is at least `1/ratio_bound`.
    pub ratio_bound: f64,
}

impl<L: LevelSampler> NestedChain<L> {
    pub fn new(sampler: L, known_terminal: f64, ratio_bound: f64) -> Result<Self> {
        if sampler.levels() == 0 {
            return Err(Error::InvalidParameter("chain needs at least one level".into()));
        }
        if !(ratio_bound >= 1.0 && ratio_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ratio bound M must be at least 1, got {ratio_bound}"
            )));
        }
        if !(known_terminal > 0.0 && known_terminal.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "terminal size must be positive, got {known_terminal}"
            )));
        }
        Ok(Self {
            sampler,
            known_terminal,
            ratio_bound,
        })
    }

    pub fn levels(&self) -> usize {
        self.sampler.levels()
    }

    pub fn variance_bound(&self, m_per_level: u64) -> f64 {
        product_variance_bound(self.levels() as u64, self.ratio_bound, m_per_level)
    }
}

/// One draw of `R_0 ⋯ R_{k-1}`, each `R_i` a hit fraction over
/// `m_per_level` membership draws. Zero if any level sees no hits.
pub fn product_sample<L: LevelSampler + ?Sized>(
    sampler: &L,
    m_per_level: u64,
    rng: &mut dyn RngCore,
) -> f64 {
    let mut product = 1.0;
    for level in 0..sampler.levels() {
        let hits = (0..m_per_level)
            .filter(|_| sampler.draw_member(level, rng))
            .count();
        product *= hits as f64 / m_per_level as f64;
    }
    product
}

/// Unbiased estimate of `#A_k / #A_0` from a fresh seeded generator.
pub fn product_estimate<L: LevelSampler>(
    chain: &NestedChain<L>,
    m_per_level: u64,
    seed: u64,
) -> Result<f64> {
    if m_per_level == 0 {
        return Err(Error::InvalidParameter("m_per_level must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(product_sample(&chain.sampler, m_per_level, &mut rng))
}

/// `exp(k (M - 1) / m) - 1`, a bound on `var(r̂) / E[r̂]²`.
pub fn product_variance_bound(k: u64, ratio_bound: f64, m_per_level: u64) -> f64 {
    (k as f64 * (ratio_bound - 1.0) / m_per_level as f64).exp_m1()
}

/// I.i.d. product-estimator draws as a sample stream.
pub struct ProductStream<'a, L: ?Sized> {
    sampler: &'a L,
    m_per_level: u64,
    rng: ChaCha20Rng,
}

impl<'a, L: LevelSampler + ?Sized> ProductStream<'a, L> {
    pub fn new(sampler: &'a L, m_per_level: u64, seed: u64, stream: u64) -> Result<Self> {
        if m_per_level == 0 {
            return Err(Error::InvalidParameter("m_per_level must be at least 1".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            sampler,
            m_per_level,
            rng,
        })
    }
}

impl<L: LevelSampler + ?Sized> SampleStream for ProductStream<'_, L> {
    fn next_sample(&mut self) -> Result<f64> {
        Ok(product_sample(self.sampler, self.m_per_level, &mut self.rng))
    }
}
