//! Deconvolution estimate of the effect-size prior g(θ).
//!
//! Observed statistics are modeled as Z = θ + N(0, 1) with θ drawn from a
//! discrete prior on a uniform grid. The prior is an exponential family
//! g(α) ∝ exp(Qα) with Q a natural cubic spline basis, fit by penalized
//! maximum likelihood (penalty c₀‖α‖). Exact observations contribute
//! Σⱼ gⱼ φ(z − θⱼ); an observation only known to lie in (l, h) contributes
//! Σⱼ gⱼ [Φ(h − θⱼ) − Φ(l − θⱼ)].

mod basis;
mod bootstrap;
mod fit;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::normal;

pub use basis::natural_spline_basis;
pub use bootstrap::{bootstrap, percentile, BootstrapResult};
pub use fit::fit_g;

pub const MODEL_FORMAT: &str = "enfp-prior-model";
pub const MODEL_VERSION: u32 = 1;

/// Statistics available for deconvolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub exact_z: Vec<f64>,
    /// `(low, high)` intervals on the Z scale.
    pub censored: Vec<(f64, f64)>,
}

impl ObservationSet {
    pub fn new(exact_z: Vec<f64>, censored: Vec<(f64, f64)>) -> Self {
        Self { exact_z, censored }
    }

    pub fn len(&self) -> usize {
        self.exact_z.len() + self.censored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, min_observations: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("no observations to fit".into()));
        }
        if self.len() < min_observations {
            return Err(Error::InvalidConfig(format!(
                "{} observations, at least {min_observations} required",
                self.len()
            )));
        }
        if let Some(z) = self.exact_z.iter().find(|z| !z.is_finite()) {
            return Err(Error::Domain(format!("non-finite z {z}")));
        }
        if let Some((l, h)) = self.censored.iter().find(|(l, h)| !(l < h)) {
            return Err(Error::Domain(format!("censor interval ({l}, {h}) is not ordered")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub grid_low: f64,
    pub grid_high: f64,
    pub grid_step: f64,
    pub basis_df: usize,
    pub penalty_c0: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
    #[serde(default = "default_min_observations")]
    pub min_observations: usize,
}

fn default_min_observations() -> usize {
    10
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid_low: -6.0,
            grid_high: 15.0,
            grid_step: 0.05,
            basis_df: 15,
            penalty_c0: 1.0,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            seed: 0,
            min_observations: default_min_observations(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.grid_low < 0.0 && 0.0 < self.grid_high) {
            return bad(format!("grid must straddle 0, got [{}, {}]", self.grid_low, self.grid_high));
        }
        if !(self.grid_step > 0.0) {
            return bad(format!("grid_step must be > 0, got {}", self.grid_step));
        }
        if self.basis_df == 0 || self.basis_df + 1 >= self.theta_grid().len() {
            return bad(format!("basis_df {} does not fit the grid", self.basis_df));
        }
        if !(self.penalty_c0 >= 0.0) {
            return bad(format!("penalty_c0 must be >= 0, got {}", self.penalty_c0));
        }
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient_tolerance must be > 0".into());
        }
        Ok(())
    }

    /// θ grid: `grid_low + j·grid_step` up to `grid_high`, with the point nearest 0 snapped to 0.
    pub fn theta_grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_low, self.grid_high, self.grid_step)
    }
}

pub fn uniform_grid(low: f64, high: f64, step: f64) -> Vec<f64> {
    let count = ((high - low) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|j| {
            let v = low + step * j as f64;
            if v.abs() < step * 1e-9 {
                0.0
            } else {
                v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Penalized objective after each accepted iteration, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub message: String,
}

/// Discrete effect-size prior on a uniform θ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub format: String,
    pub version: u32,
    pub theta_grid: Vec<f64>,
    pub masses: Vec<f64>,
    pub basis_df: usize,
    pub penalty_c0: f64,
    pub coefficients: Vec<f64>,
    /// Marginal log-likelihood of the data the model was fitted to; absent for priors given directly.
    #[serde(default)]
    pub log_likelihood: Option<f64>,
    pub converged: bool,
    #[serde(default)]
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<FitConfig>,
}

impl PriorModel {
    /// A prior given directly by masses on a grid; masses are normalized.
    pub fn from_masses(theta_grid: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if theta_grid.is_empty() || theta_grid.len() != masses.len() {
            return Err(Error::InvalidConfig(format!(
                "grid has {} points, masses {}",
                theta_grid.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidConfig("masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidConfig("masses sum to zero".into()));
        }
        let model = Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            theta_grid,
            masses: masses.iter().map(|g| g / total).collect(),
            basis_df: 0,
            penalty_c0: 0.0,
            coefficients: Vec::new(),
            log_likelihood: None,
            converged: true,
            diagnostics: FitDiagnostics::default(),
            config: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Point mass at `theta`.
    pub fn point_mass(theta: f64) -> Self {
        Self::from_masses(vec![theta], vec![1.0]).expect("single point is a valid prior")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::InvalidConfig(format!("not a prior model file (format {:?})", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported model version {}", self.version)));
        }
        if self.theta_grid.is_empty() || self.theta_grid.len() != self.masses.len() {
            return Err(Error::InvalidConfig("grid and masses differ in length".into()));
        }
        if self.masses.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::InvalidConfig("negative mass".into()));
        }
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("masses sum to {total}")));
        }
        if self.theta_grid.len() > 1 {
            let step = self.theta_grid[1] - self.theta_grid[0];
            if !(step > 0.0) {
                return Err(Error::InvalidConfig("theta grid must be ascending".into()));
            }
            for w in self.theta_grid.windows(2) {
                if ((w[1] - w[0]) - step).abs() > 1e-12 * step.max(1.0) {
                    return Err(Error::InvalidConfig("theta grid spacing is not uniform".into()));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of grid and masses; identifies the model in curves and ledgers.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.theta_grid.iter().chain(&self.masses) {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }
}

/// ρ = Σ_{θⱼ ≤ 0} gⱼ. A grid point at exactly 0 is null.
pub fn rho_from_g(model: &PriorModel) -> f64 {
    model
        .theta_grid
        .iter()
        .zip(&model.masses)
        .filter(|(theta, _)| **theta <= 0.0)
        .map(|(_, g)| g)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Likelihood kernel rows, scaled per row to avoid underflow:
/// `P[i][j] = kernel(obs_i, θ_j) / exp(log_scale[i])`.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub cols: usize,
    pub values: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl Kernel {
    pub fn build(obs: &ObservationSet, grid: &[f64]) -> Result<Self> {
        let cols = grid.len();
        let rows = obs.len();
        let mut values = Vec::with_capacity(rows * cols);
        let mut log_scale = Vec::with_capacity(rows);
        for &z in &obs.exact_z {
            let top = grid.iter().map(|t| normal::log_pdf(z - t)).fold(f64::NEG_INFINITY, f64::max);
            values.extend(grid.iter().map(|t| (normal::log_pdf(z - t) - top).exp()));
            log_scale.push(top);
        }
        for &(low, high) in &obs.censored {
            let start = values.len();
            values.extend(grid.iter().map(|t| normal::interval_prob(low - t, high - t)));
            let top = values[start..].iter().cloned().fold(0.0, f64::max);
            if !(top > 0.0) {
                return Err(Error::Domain(format!("censored interval ({low}, {high}) has no support on the grid")));
            }
            values[start..].iter_mut().for_each(|v| *v /= top);
            log_scale.push(top.ln());
        }
        Ok(Self { cols, values, log_scale })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Unpenalized mixture log-likelihood Σᵢ log fᵢ of the observations under `model`.
pub fn log_likelihood(model: &PriorModel, obs: &ObservationSet) -> f64 {
    let mut total = 0.0;
    for &z in &obs.exact_z {
        let terms = model.theta_grid.iter().zip(&model.masses).filter(|(_, g)| **g > 0.0);
        let top = terms.clone().map(|(t, g)| g.ln() + normal::log_pdf(z - t)).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = terms.map(|(t, g)| (g.ln() + normal::log_pdf(z - t) - top).exp()).sum();
        total += top + s.ln();
    }
    for &(low, high) in &obs.censored {
        let f: f64 = model
            .theta_grid
            .iter()
            .zip(&model.masses)
            .map(|(t, g)| g * normal::interval_prob(low - t, high - t))
            .sum();
        total += f.ln();
    }
    total
}
