use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::product::{product_variance_bound, LevelSampler, ProductStream};
use crate::error::{Error, Result};
use crate::estimator::{estimate_mean, ApproxSpec, EstimateReport, Mode};

/// Largest poset handled by the enumeration-backed operations.
pub const MAX_ENUMERABLE: usize = 10;

/// Strict partial order on `0..n`, stored transitively closed as bitmasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poset {
    n: usize,
    /// `below[j]` has bit `i` set when `i ≺ j`.
    below: Vec<u64>,
    /// `above[i]` has bit `j` set when `i ≺ j`.
    above: Vec<u64>,
}

impl Poset {
    /// Builds the transitive closure of `relations` (pairs `(i, j)`
    /// meaning `i ≺ j`, zero-based) and rejects cycles.
    pub fn new(n: usize, relations: &[(usize, usize)]) -> Result<Self> {
        if n > 64 {
            return Err(Error::Size { n, max: 64 });
        }
        let mut below = vec![0u64; n];
        for &(i, j) in relations {
            if i >= n || j >= n {
                return Err(Error::Parse(format!(
                    "relation ({i}, {j}) refers to an element outside 0..{n}"
                )));
            }
            below[j] |= 1 << i;
        }
        // Warshall on bitsets: anything below k is below whatever k is below.
        for k in 0..n {
            for j in 0..n {
                if below[j] >> k & 1 == 1 {
                    below[j] |= below[k];
                }
            }
        }
        if let Some(i) = (0..n).find(|&i| below[i] >> i & 1 == 1) {
            return Err(Error::Parse(format!("relations contain a cycle through element {}", i + 1)));
        }
        let mut above = vec![0u64; n];
        for j in 0..n {
            for i in 0..n {
                if below[j] >> i & 1 == 1 {
                    above[i] |= 1 << j;
                }
            }
        }
        Ok(Self { n, below, above })
    }

    pub fn chain(n: usize) -> Self {
        let rel: Vec<_> = (1..n).map(|j| (j - 1, j)).collect();
        Self::new(n, &rel).expect("a chain is acyclic")
    }

    pub fn antichain(n: usize) -> Self {
        Self::new(n, &[]).expect("no relations")
    }

    /// Text format: first line `n`, then one `i j` pair per line meaning
    /// `i ≺ j`, one-based. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty poset file".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Parse(format!("first line must be the element count, got {first:?}")))?;
        let mut rel = Vec::new();
        for (lineno, line) in lines {
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("line {lineno}: expected `i j`, got {line:?}")))?;
            match nums[..] {
                [i, j] if (1..=n).contains(&i) && (1..=n).contains(&j) => rel.push((i - 1, j - 1)),
                [_, _] => {
                    return Err(Error::Parse(format!(
                        "line {lineno}: elements must lie in 1..={n}"
                    )))
                }
                _ => return Err(Error::Parse(format!("line {lineno}: expected `i j`, got {line:?}"))),
            }
        }
        Self::new(n, &rel)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `i ≺ j`
    pub fn precedes(&self, i: usize, j: usize) -> bool {
        self.below[j] >> i & 1 == 1
    }

    /// True when `order` lists every element once and never puts an
    /// element before one of its predecessors.
    pub fn is_linear_extension(&self, order: &[usize]) -> bool {
        if order.len() != self.n {
            return false;
        }
        let mut placed = 0u64;
        for &x in order {
            if x >= self.n || placed >> x & 1 == 1 || self.below[x] & !placed != 0 {
                return false;
            }
            placed |= 1 << x;
        }
        true
    }

    fn full_mask(&self) -> u64 {
        if self.n == 64 {
            u64::MAX
        } else {
            (1u64 << self.n) - 1
        }
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.n > MAX_ENUMERABLE {
            Err(Error::Size {
                n: self.n,
                max: MAX_ENUMERABLE,
            })
        } else {
            Ok(())
        }
    }

    /// Linear-extension counts of every downset, indexed by bitmask
    /// (zero for masks that are not downsets).
    fn downset_counts(&self) -> Vec<u64> {
        let size = 1usize << self.n;
        let mut counts = vec![0u64; size];
        counts[0] = 1;
        for mask in 0..size {
            let c = counts[mask];
            if c == 0 {
                continue;
            }
            for x in 0..self.n {
                if mask >> x & 1 == 0 && self.below[x] & !(mask as u64) == 0 {
                    counts[mask | 1 << x] += c;
                }
            }
        }
        counts
    }

    fn all_extensions(&self) -> Vec<Vec<usize>> {
        fn walk(p: &Poset, placed: u64, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == p.n {
                out.push(prefix.clone());
                return;
            }
            for x in 0..p.n {
                if placed >> x & 1 == 0 && p.below[x] & !placed == 0 {
                    prefix.push(x);
                    walk(p, placed | 1 << x, prefix, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, 0, &mut Vec::with_capacity(self.n), &mut out);
        out
    }
}

/// Exact count by dynamic programming over downsets.
pub fn linext_count_exact(p: &Poset) -> Result<u64> {
    p.check_enumerable()?;
    Ok(p.downset_counts()[p.full_mask() as usize])
}

/// Exact count by checking all `n!` permutations.
pub fn linext_count_brute_force(p: &Poset) -> Result<u64> {
    p.check_enumerable()?;
    // Heap's algorithm
    let n = p.n;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stack = vec![0usize; n];
    let mut count = u64::from(p.is_linear_extension(&perm));
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            count += u64::from(p.is_linear_extension(&perm));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    Ok(count)
}

/// Uniform linear extension: enumerate them all and pick one index.
/// The result lists elements from lowest to highest position.
pub fn linext_uniform_sample(p: &Poset, seed: u64) -> Result<Vec<usize>> {
    p.check_enumerable()?;
    let all = p.all_extensions();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(all[rng.random_range(0..all.len())].clone())
}

/// Exact uniform sampler over the linear extensions of any downset,
/// driven by the downset counts.
#[derive(Debug, Clone)]
pub struct LinextSampler {
    poset: Poset,
    counts: Vec<u64>,
}

impl LinextSampler {
    pub fn new(poset: &Poset) -> Result<Self> {
        poset.check_enumerable()?;
        Ok(Self {
            counts: poset.downset_counts(),
            poset: poset.clone(),
        })
    }

    pub fn count(&self, downset: u64) -> u64 {
        self.counts[downset as usize]
    }

    /// Element in the highest position of a uniform extension of `downset`.
    pub fn sample_top(&self, downset: u64, rng: &mut dyn RngCore) -> usize {
        let total = self.count(downset);
        debug_assert!(total > 0, "mask {downset:#b} is not a nonempty downset");
        let mut pick = rng.random_range(0..total);
        for x in 0..self.poset.n {
            if downset >> x & 1 == 1 && self.poset.above[x] & downset == 0 {
                let w = self.count(downset & !(1 << x));
                if pick < w {
                    return x;
                }
                pick -= w;
            }
        }
        unreachable!("weights of maximal elements sum to the downset count")
    }

    /// Uniform extension of the whole poset, lowest position first.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<usize> {
        let mut mask = self.poset.full_mask();
        let mut order = vec![0; self.poset.n];
        for slot in order.iter_mut().rev() {
            let x = self.sample_top(mask, rng);
            *slot = x;
            mask &= !(1 << x);
        }
        order
    }
}

/// The chain `A_0 ⊇ A_1 ⊇ … ⊇ A_n` of linear-extension sets obtained by
/// repeatedly pinning the smallest-label maximal element of the remaining
/// elements to the highest free position.
#[derive(Debug, Clone)]
pub struct SelfReduction {
    sampler: LinextSampler,
    /// `remaining[i]` is the downset still free at level `i`.
    remaining: Vec<u64>,
    pinned: Vec<usize>,
}

impl SelfReduction {
    pub fn new(p: &Poset) -> Result<Self> {
        let sampler = LinextSampler::new(p)?;
        let mut mask = p.full_mask();
        let mut remaining = vec![mask];
        let mut pinned = Vec::with_capacity(p.n);
        while mask != 0 {
            let x = (0..p.n)
                .find(|&x| mask >> x & 1 == 1 && p.above[x] & mask == 0)
                .expect("a nonempty finite poset has a maximal element");
            pinned.push(x);
            mask &= !(1 << x);
            remaining.push(mask);
        }
        Ok(Self {
            sampler,
            remaining,
            pinned,
        })
    }

    /// Elements in the order they are pinned (highest position first).
    pub fn pinned(&self) -> &[usize] {
        &self.pinned
    }

    /// `#A_{level+1} / #A_level` from exact counts.
    pub fn exact_ratio(&self, level: usize) -> f64 {
        self.sampler.count(self.remaining[level + 1]) as f64
            / self.sampler.count(self.remaining[level]) as f64
    }
}

impl LevelSampler for SelfReduction {
    fn levels(&self) -> usize {
        self.pinned.len()
    }

    fn draw_member(&self, level: usize, rng: &mut dyn RngCore) -> bool {
        // Membership in A_{level+1} depends only on the top free position,
        // whose marginal under the uniform extension is drawn exactly.
        self.sampler.sample_top(self.remaining[level], rng) == self.pinned[level]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinextEstimate {
    /// Estimated number of linear extensions.
    pub estimate: f64,
    /// Estimate of `#A_n / #A_0 = 1 / count`.
    pub ratio_estimate: f64,
    /// Relative-variance bound handed to the mean estimator.
    pub c_squared: f64,
    /// Accuracy requested for the ratio so the inverted count meets `epsilon`.
    pub ratio_epsilon: f64,
    pub levels: usize,
    pub m_per_level: u64,
    /// Membership draws consumed in total.
    pub membership_draws: u64,
    pub report: Option<EstimateReport>,
}

/// `(epsilon, delta)` estimate of the number of linear extensions.
///
/// The ratio `1/count` is estimated to accuracy `epsilon / (1 + epsilon)`,
/// which keeps the inverted estimate within `[1 - epsilon, 1 + epsilon]`
/// of the count.
pub fn linext_approx_count(
    p: &Poset,
    epsilon: f64,
    delta: f64,
    m_per_level: u64,
    seed: u64,
) -> Result<LinextEstimate> {
    p.check_enumerable()?;
    ApproxSpec::new(epsilon, delta, 1.0)?;
    if m_per_level == 0 {
        return Err(Error::InvalidParameter("m_per_level must be at least 1".into()));
    }
    let n = p.len();
    let ratio_epsilon = epsilon / (1.0 + epsilon);
    let c_squared = product_variance_bound(n as u64, n as f64, m_per_level);
    if n <= 1 {
        // one extension, zero-variance chain
        return Ok(LinextEstimate {
            estimate: 1.0,
            ratio_estimate: 1.0,
            c_squared,
            ratio_epsilon,
            levels: n,
            m_per_level,
            membership_draws: 0,
            report: None,
        });
    }
    let chain = SelfReduction::new(p)?;
    let spec = ApproxSpec::new(ratio_epsilon, delta, c_squared.sqrt())?;
    let mut stream = ProductStream::new(&chain, m_per_level, seed, 0)?;
    let report = estimate_mean(&mut stream, &spec, Mode::Strict)?;
    Ok(LinextEstimate {
        estimate: 1.0 / report.mu_hat,
        ratio_estimate: report.mu_hat,
        c_squared,
        ratio_epsilon,
        levels: n,
        m_per_level,
        membership_draws: report.total_samples * n as u64 * m_per_level,
        report: Some(report),
    })
}
