//! Analytic expectations for SBM edge counts and the negative sampler.

use cmp_core::graph::SbmConfig;

/// Unordered same-community and cross-community pair counts.
pub fn pair_counts(cfg: &SbmConfig) -> (f64, f64) {
    let block = (cfg.n / cfg.c) as f64;
    let intra = cfg.c as f64 * block * (block - 1.0) / 2.0;
    let all = cfg.n as f64 * (cfg.n as f64 - 1.0) / 2.0;
    (intra, all - intra)
}

/// Mean and standard deviation of the undirected edge count.
pub fn edge_count(cfg: &SbmConfig) -> (f64, f64) {
    let (pi, po) = pair_counts(cfg);
    let mean = pi * cfg.p_in + po * cfg.p_out;
    let sd = (pi * cfg.p_in * (1.0 - cfg.p_in) + po * cfg.p_out * (1.0 - cfg.p_out)).sqrt();
    (mean, sd)
}

/// Mean and standard deviation of the same-community share among default-count
/// negative samples (as many as there are positive edges).
pub fn negative_same_fraction(cfg: &SbmConfig) -> (f64, f64) {
    let (pi, po) = pair_counts(cfg);
    // Non-adjacent pairs by type, and the same-community share of a uniform sample from them.
    let (ci, co) = (pi * (1.0 - cfg.p_in), po * (1.0 - cfg.p_out));
    let q = ci / (ci + co);
    let m = pi * cfg.p_in + po * cfg.p_out;
    // Sampling noise plus the spread of the complement's own composition (delta method).
    let var_complement = q * q * (1.0 - q) * (1.0 - q) * (pi * cfg.p_in * (1.0 - cfg.p_in) / (ci * ci) + po * cfg.p_out * (1.0 - cfg.p_out) / (co * co));
    (q, (q * (1.0 - q) / m + var_complement).sqrt())
}
