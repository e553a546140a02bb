//! Approximate counting built on the mean estimator: the product
//! estimator over a nested chain of sets, linear extensions of small
//! posets, and the ratio combiner for partition-function estimates.

mod gibbs;
mod poset;
mod product;

pub use gibbs::{eps_prime, gibbs_combine, gibbs_estimate, lognormal_sigma_for_relvar, GibbsEstimate};
pub use poset::{
    linext_approx_count, linext_count_brute_force, linext_count_exact, linext_uniform_sample,
    LinextEstimate, LinextSampler, Poset, SelfReduction, MAX_ENUMERABLE,
};
pub use product::{
    product_estimate, product_sample, product_variance_bound, BernoulliChain, LevelSampler,
    NestedChain, ProductStream,
};
