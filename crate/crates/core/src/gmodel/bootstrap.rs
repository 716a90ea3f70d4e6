use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{basis::natural_spline_basis, fit::fit_rows, rho_from_g, FitConfig, Kernel, ObservationSet};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::posterior::HEvaluator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub seed: u64,
    pub replicates: usize,
    /// ρ̂ per replicate in replicate order; `None` where the refit did not converge.
    pub rho: Vec<Option<f64>>,
    pub failures: usize,
    pub rho_ci: (f64, f64),
    pub z_grid: Vec<f64>,
    pub h_low: Vec<f64>,
    pub h_high: Vec<f64>,
}

/// Linear-interpolation percentile (`q` in [0, 1]) of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Nonparametric bootstrap of ρ̂ and ĥ(z).
///
/// Exact and censored observations are resampled together as one pool. Each
/// replicate draws from its own ChaCha stream (`seed`, stream = replicate
/// index), so results do not depend on execution order.
pub fn bootstrap(
    obs: &ObservationSet,
    cfg: &FitConfig,
    replicates: usize,
    z_grid: &[f64],
    exec: Execution,
) -> Result<BootstrapResult> {
    if replicates < 2 {
        return Err(Error::InvalidConfig(format!("bootstrap needs at least 2 replicates, got {replicates}")));
    }
    obs.validate(cfg.min_observations)?;
    cfg.validate()?;
    let grid = cfg.theta_grid();
    let kernel = Kernel::build(obs, &grid)?;
    let basis = natural_spline_basis(&grid, cfg.basis_df);
    let n = obs.len();

    let fits: Vec<Option<(f64, Vec<f64>)>> = map_indexed(replicates, exec, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let model = fit_rows(&kernel, &rows, &basis, grid.clone(), cfg);
        if !model.converged {
            return None;
        }
        let eval = HEvaluator::new(&model);
        let h: Vec<f64> = z_grid.iter().map(|&z| eval.eval(z).h).collect();
        Some((rho_from_g(&model), h))
    });

    let ok: Vec<&(f64, Vec<f64>)> = fits.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::InvalidConfig("no bootstrap replicate converged".into()));
    }
    let rhos: Vec<f64> = ok.iter().map(|(rho, _)| *rho).collect();
    let mut h_low = Vec::with_capacity(z_grid.len());
    let mut h_high = Vec::with_capacity(z_grid.len());
    for k in 0..z_grid.len() {
        let column: Vec<f64> = ok.iter().map(|(_, h)| h[k]).collect();
        h_low.push(percentile(&column, 0.025));
        h_high.push(percentile(&column, 0.975));
    }
    Ok(BootstrapResult {
        seed: cfg.seed,
        replicates,
        rho: fits.iter().map(|f| f.as_ref().map(|(rho, _)| *rho)).collect(),
        failures: fits.iter().filter(|f| f.is_none()).count(),
        rho_ci: (percentile(&rhos, 0.025), percentile(&rhos, 0.975)),
        z_grid: z_grid.to_vec(),
        h_low,
        h_high,
    })
}
