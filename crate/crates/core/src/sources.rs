//! Seeded i.i.d. sample streams with closed-form moments.
//!
//! Every stream is a ChaCha20 generator seeded with `seed_from_u64(seed)`;
//! the replicate index selects the ChaCha stream, so sibling replicates
//! never share keystream blocks and can be created from any thread.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Recorded alongside experiment outputs so runs can be reproduced.
pub const RNG_ALGORITHM: &str = "chacha20:seed_from_u64;stream=replicate";

/// Anything that yields draws one at a time.
pub trait SampleStream {
    fn next_sample(&mut self) -> Result<f64>;
}

impl<S: SampleStream + ?Sized> SampleStream for &mut S {
    fn next_sample(&mut self) -> Result<f64> {
        (**self).next_sample()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Constant(f64),
    Normal { mean: f64, sd: f64 },
    /// `exp(sigma * Z)` with `Z` standard normal.
    LogNormal { sigma: f64 },
    /// `scale` with probability `p`, else 0.
    ScaledBernoulli { p: f64, scale: f64 },
    /// Pareto on `[1, inf)` with tail index `shape`.
    Pareto { shape: f64 },
    /// A fixed sequence replayed in order; ignores seed and replicate.
    Recorded(Arc<[f64]>),
}

/// Exact moments of a built-in distribution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SourceFacts {
    pub true_mean: f64,
    /// sigma² / mu²
    pub true_relvar: f64,
    /// Smallest valid `c`, i.e. `sqrt(true_relvar)`.
    pub c_bound: f64,
}

fn bad(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Constant(v) if !v.is_finite() => {
                Err(bad(format!("constant value must be finite, got {v}")))
            }
            Distribution::Normal { mean, sd } if !mean.is_finite() || !(sd >= 0.0 && sd.is_finite()) => {
                Err(bad(format!("normal needs finite mean and sd >= 0, got ({mean}, {sd})")))
            }
            Distribution::LogNormal { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(bad(format!("lognormal sigma must be >= 0, got {sigma}")))
            }
            Distribution::ScaledBernoulli { p, scale }
                if !(p > 0.0 && p <= 1.0) || !(scale > 0.0 && scale.is_finite()) =>
            {
                Err(bad(format!("bernoulli needs p in (0, 1] and scale > 0, got ({p}, {scale})")))
            }
            Distribution::Pareto { shape } if !(shape > 0.0 && shape.is_finite()) => {
                Err(bad(format!("pareto shape must be positive, got {shape}")))
            }
            Distribution::Recorded(ref values) => match values.iter().find(|v| !v.is_finite()) {
                Some(v) => Err(bad(format!("recorded values must be finite, found {v}"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn facts(&self) -> Result<SourceFacts> {
        let (mean, relvar) = match *self {
            Distribution::Constant(v) => (v, 0.0),
            Distribution::Normal { mean, sd } => (mean, (sd / mean).powi(2)),
            Distribution::LogNormal { sigma } => {
                let s2 = sigma * sigma;
                ((0.5 * s2).exp(), s2.exp_m1())
            }
            Distribution::ScaledBernoulli { p, scale } => (p * scale, (1.0 - p) / p),
            Distribution::Pareto { shape } => {
                if shape <= 2.0 {
                    return Err(Error::Unsupported(format!(
                        "pareto shape {shape} has infinite variance"
                    )));
                }
                // mean a/(a-1), variance a/((a-1)²(a-2))
                (shape / (shape - 1.0), 1.0 / (shape * (shape - 2.0)))
            }
            Distribution::Recorded(_) => {
                return Err(Error::Unsupported(
                    "recorded sequences have no known population moments".into(),
                ))
            }
        };
        if !(mean > 0.0) {
            return Err(Error::Unsupported(format!("mean {mean} is not positive")));
        }
        Ok(SourceFacts {
            true_mean: mean,
            true_relvar: relvar,
            c_bound: relvar.sqrt(),
        })
    }

    /// Parses the `name:param,param` syntax, e.g. `normal:100,50`,
    /// `pareto:2.5`, `bernoulli:0.2` or `recorded:draws.txt`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let name = name.trim().to_ascii_lowercase();
        if name == "recorded" {
            return Self::load_recorded(args.trim());
        }
        let params = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {p:?} in {text:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let arity = |want: &[usize]| {
            if want.contains(&params.len()) {
                Ok(())
            } else {
                Err(Error::Parse(format!(
                    "{name} takes {want:?} parameters, got {}",
                    params.len()
                )))
            }
        };
        let dist = match name.as_str() {
            "constant" | "const" => {
                arity(&[1])?;
                Distribution::Constant(params[0])
            }
            "normal" => {
                arity(&[2])?;
                Distribution::Normal { mean: params[0], sd: params[1] }
            }
            "lognormal" => {
                arity(&[1])?;
                Distribution::LogNormal { sigma: params[0] }
            }
            "bernoulli" => {
                arity(&[1, 2])?;
                Distribution::ScaledBernoulli {
                    p: params[0],
                    scale: params.get(1).copied().unwrap_or(1.0),
                }
            }
            "pareto" => {
                arity(&[1])?;
                Distribution::Pareto { shape: params[0] }
            }
            other => return Err(Error::Parse(format!("unknown distribution {other:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }

    /// One decimal value per line; blank lines and `#` comments are skipped.
    pub fn parse_recorded(text: &str) -> Result<Self> {
        let values = text
            .lines()
            .enumerate()
            .map(|(i, line)| (i, line.trim()))
            .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
            .map(|(i, line)| {
                line.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad value {line:?}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let dist = Distribution::Recorded(values.into());
        dist.validate()?;
        Ok(dist)
    }

    pub fn load_recorded(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_recorded(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Constant(v) => write!(f, "constant:{v}"),
            Distribution::Normal { mean, sd } => write!(f, "normal:{mean},{sd}"),
            Distribution::LogNormal { sigma } => write!(f, "lognormal:{sigma}"),
            Distribution::ScaledBernoulli { p, scale } => write!(f, "bernoulli:{p},{scale}"),
            Distribution::Pareto { shape } => write!(f, "pareto:{shape}"),
            Distribution::Recorded(values) => write!(f, "recorded[{}]", values.len()),
        }
    }
}

/// A seeded stream of draws from a [`Distribution`].
#[derive(Debug, Clone)]
pub struct SampleSource {
    dist: Distribution,
    seed: u64,
    replicate: u64,
    rng: ChaCha20Rng,
    position: usize,
}

impl SampleSource {
    pub fn new(dist: Distribution, seed: u64) -> Result<Self> {
        Self::replicate(dist, seed, 0)
    }

    pub fn replicate(dist: Distribution, seed: u64, replicate: u64) -> Result<Self> {
        dist.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        Ok(Self {
            dist,
            seed,
            replicate,
            rng,
            position: 0,
        })
    }

    /// Fresh source on the same distribution and seed, different stream.
    pub fn sibling(&self, replicate: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        Self {
            dist: self.dist.clone(),
            seed: self.seed,
            replicate,
            rng,
            position: 0,
        }
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_index(&self) -> u64 {
        self.replicate
    }

    /// Number of draws taken so far.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn facts(&self) -> Result<SourceFacts> {
        self.dist.facts()
    }
}

impl SampleStream for SampleSource {
    fn next_sample(&mut self) -> Result<f64> {
        let x = match self.dist {
            Distribution::Constant(v) => v,
            Distribution::Normal { mean, sd } => {
                let z: f64 = self.rng.sample(StandardNormal);
                mean + sd * z
            }
            Distribution::LogNormal { sigma } => {
                let z: f64 = self.rng.sample(StandardNormal);
                (sigma * z).exp()
            }
            Distribution::ScaledBernoulli { p, scale } => {
                if self.rng.random::<f64>() < p {
                    scale
                } else {
                    0.0
                }
            }
            Distribution::Pareto { shape } => {
                // 1 - [0, 1) is (0, 1], so the power is finite
                let u = 1.0 - self.rng.random::<f64>();
                u.powf(-1.0 / shape)
            }
            Distribution::Recorded(ref values) => match values.get(self.position) {
                Some(&v) => v,
                None => {
                    return Err(Error::InsufficientSamples {
                        consumed: self.position,
                    })
                }
            },
        };
        self.position += 1;
        Ok(x)
    }
}

/// Multiplies every draw of the inner stream by a constant.
#[derive(Debug, Clone)]
pub struct Scaled<S> {
    inner: S,
    factor: f64,
}

impl<S> Scaled<S> {
    pub fn new(inner: S, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl<S: SampleStream> SampleStream for Scaled<S> {
    fn next_sample(&mut self) -> Result<f64> {
        Ok(self.inner.next_sample()? * self.factor)
    }
}

/// Adapts a closure into a stream.
pub struct FromFn<F>(pub F);

impl<F: FnMut() -> Result<f64>> SampleStream for FromFn<F> {
    fn next_sample(&mut self) -> Result<f64> {
        (self.0)()
    }
}
