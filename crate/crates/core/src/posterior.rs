//! h-probability: the posterior probability of positive efficacy given Z = z.
//!
//! h(z) = Σ_{θⱼ>0} gⱼ φ(z−θⱼ) / Σⱼ gⱼ φ(z−θⱼ). Sums are accumulated after
//! shifting by the largest log-weight, so values stay exact far outside the
//! grid's support. θ = 0 counts as null.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmodel::PriorModel;
use crate::gmodel::uniform_grid;
use crate::normal::log_pdf;
use crate::trial::{PolicyMode, RejectionPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub h: f64,
    /// Pr[θ ≤ 0 | Z = z] computed directly, so it keeps precision when h ≈ 1.
    pub null: f64,
    /// Both null and non-null mass exist but one side underflowed completely.
    pub saturated: bool,
}

/// Precomputed log-masses for repeated evaluation against one prior.
#[derive(Debug, Clone)]
pub struct HEvaluator {
    support: Vec<(f64, f64, bool)>,
    has_null: bool,
    has_positive: bool,
}

impl HEvaluator {
    pub fn new(model: &PriorModel) -> Self {
        let support: Vec<(f64, f64, bool)> = model
            .theta_grid
            .iter()
            .zip(&model.masses)
            .filter(|(_, g)| **g > 0.0)
            .map(|(&t, &g)| (t, g.ln(), t > 0.0))
            .collect();
        let has_null = support.iter().any(|s| !s.2);
        let has_positive = support.iter().any(|s| s.2);
        Self { support, has_null, has_positive }
    }

    pub fn eval(&self, z: f64) -> HValue {
        if !self.has_null {
            return HValue { h: 1.0, null: 0.0, saturated: false };
        }
        if !self.has_positive {
            return HValue { h: 0.0, null: 1.0, saturated: false };
        }
        let top = self
            .support
            .iter()
            .map(|&(t, lg, _)| lg + log_pdf(z - t))
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut pos, mut null) = (0.0, 0.0);
        for &(t, lg, positive) in &self.support {
            let w = (lg + log_pdf(z - t) - top).exp();
            if positive {
                pos += w;
            } else {
                null += w;
            }
        }
        let total = pos + null;
        let h = pos / total;
        let null = null / total;
        HValue { h, null, saturated: h == 0.0 || h == 1.0 }
    }

    /// (infimum, supremum) of h over the real line.
    pub fn range(&self) -> (f64, f64) {
        let lowest = self.support.first().map(|s| s.2).unwrap_or(false);
        let highest = self.support.last().map(|s| s.2).unwrap_or(false);
        (if lowest { 1.0 } else { 0.0 }, if highest { 1.0 } else { 0.0 })
    }
}

pub fn h_probability(model: &PriorModel, z: f64) -> HValue {
    HEvaluator::new(model).eval(z)
}

/// Smallest z with h(z) ≥ h0, by bisection to |Δz| < 1e-10.
pub fn z_for_h(model: &PriorModel, h0: f64) -> Result<f64> {
    let eval = HEvaluator::new(model);
    let (low, high) = eval.range();
    if !(h0 > low && h0 < high) {
        return Err(Error::OutOfRange { h0, low, high });
    }
    let h = |z: f64| eval.eval(z).h;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while h(hi) < h0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::OutOfRange { h0, low, high });
        }
    }
    while h(lo) >= h0 {
        lo *= 2.0;
        if lo < -1e8 {
            return Err(Error::OutOfRange { h0, low, high });
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) >= h0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Fill in critical values for an h-threshold policy: every endpoint uses z*(h_floor).
pub fn resolve_policy(policy: &RejectionPolicy, m: usize, model: &PriorModel) -> Result<RejectionPolicy> {
    if policy.mode != PolicyMode::HThreshold || policy.critical_z.is_some() {
        return Ok(policy.clone());
    }
    let floor = policy
        .h_floor
        .ok_or_else(|| Error::InvalidRecord("h-threshold policy without h_floor".into()))?;
    let z = z_for_h(model, floor)?;
    Ok(policy.clone().with_critical_z(vec![z; m]))
}

/// Tabulated h(z) with optional bootstrap bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HCurve {
    pub z_grid: Vec<f64>,
    pub h_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<Vec<f64>>,
    pub model_id: String,
}

/// Default export grid, z ∈ [−1, 6] in steps of 0.01.
pub fn default_z_grid() -> Vec<f64> {
    uniform_grid(-1.0, 6.0, 0.01)
}

pub fn h_curve(model: &PriorModel, z_grid: &[f64]) -> Result<HCurve> {
    if z_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("z grid must be strictly ascending".into()));
    }
    let eval = HEvaluator::new(model);
    Ok(HCurve {
        z_grid: z_grid.to_vec(),
        h_values: z_grid.iter().map(|&z| eval.eval(z).h).collect(),
        ci_low: None,
        ci_high: None,
        model_id: model.content_hash(),
    })
}

impl HCurve {
    /// Attach bands. Bounds are widened where needed so they always contain the point estimate.
    pub fn with_bands(mut self, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != self.z_grid.len() || high.len() != self.z_grid.len() {
            return Err(Error::InvalidConfig("band length does not match z grid".into()));
        }
        self.ci_low = Some(low.iter().zip(&self.h_values).map(|(l, h)| l.min(*h)).collect());
        self.ci_high = Some(high.iter().zip(&self.h_values).map(|(u, h)| u.max(*h)).collect());
        Ok(self)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "z,h,ci_low,ci_high")?;
        for k in 0..self.z_grid.len() {
            let band = |b: &Option<Vec<f64>>| b.as_ref().map(|v| v[k].to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", self.z_grid[k], self.h_values[k], band(&self.ci_low), band(&self.ci_high))?;
        }
        Ok(())
    }

    /// Self-contained 800x500 SVG: solid estimate, dashed bands.
    pub fn to_svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 500.0;
        const LEFT: f64 = 70.0;
        const RIGHT: f64 = 30.0;
        const TOP: f64 = 30.0;
        const BOTTOM: f64 = 60.0;
        let (z0, z1) = match (self.z_grid.first(), self.z_grid.last()) {
            (Some(a), Some(b)) if b > a => (*a, *b),
            (Some(a), _) => (*a - 1.0, *a + 1.0),
            _ => (0.0, 1.0),
        };
        let x = |z: f64| LEFT + (z - z0) / (z1 - z0) * (W - LEFT - RIGHT);
        let y = |h: f64| TOP + (1.0 - h) * (H - TOP - BOTTOM);
        let path = |values: &[f64]| {
            let mut d = String::new();
            for (k, (&z, &v)) in self.z_grid.iter().zip(values).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, x(z), y(v));
            }
            d
        };
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="500" viewBox="0 0 800 500">"#
        );
        let _ = writeln!(svg, r#"<rect x="0" y="0" width="800" height="500" style="fill:#ffffff"/>"#);
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" style="fill:none;stroke:#000000;stroke-width:1"/>"#,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        for k in 0..=5 {
            let h = k as f64 / 5.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" style="font:12px sans-serif;text-anchor:end">{h:.1}</text>"#,
                LEFT - 8.0,
                y(h) + 4.0
            );
        }
        let first_tick = z0.ceil() as i64;
        let last_tick = z1.floor() as i64;
        for t in first_tick..=last_tick {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" style="font:12px sans-serif;text-anchor:middle">{t}</text>"#,
                x(t as f64),
                H - BOTTOM + 20.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" style="font:14px sans-serif;text-anchor:middle">z</text>"#,
            LEFT + (W - LEFT - RIGHT) / 2.0,
            H - 15.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="20" y="{:.1}" style="font:14px sans-serif;text-anchor:middle" transform="rotate(-90 20 {:.1})">h(z)</text>"#,
            TOP + (H - TOP - BOTTOM) / 2.0,
            TOP + (H - TOP - BOTTOM) / 2.0
        );
        for band in [&self.ci_low, &self.ci_high].into_iter().flatten() {
            let _ = writeln!(
                svg,
                r#"<path d="{}" style="fill:none;stroke:#000000;stroke-width:1.5;stroke-dasharray:6,4"/>"#,
                path(band).trim_end()
            );
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" style="fill:none;stroke:#000000;stroke-width:2"/>"#,
            path(&self.h_values).trim_end()
        );
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::pdf;
    use proptest::prelude::*;

    fn two_point() -> PriorModel {
        PriorModel::from_masses(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn h_examples() {
        assert_eq!(h_probability(&PriorModel::point_mass(2.0), -3.0).h, 1.0);
        assert!((h_probability(&two_point(), 0.0).h - 0.5).abs() < 1e-15);
        let want = pdf(1.0) / (pdf(1.0) + pdf(3.0));
        assert!((h_probability(&two_point(), 2.0).h - want).abs() < 1e-12);
        assert!((want - 0.982_013_790_037_908_4).abs() < 1e-12);
        assert_eq!(h_probability(&PriorModel::point_mass(0.0), 5.0).h, 0.0);
    }

    #[test]
    fn far_tails_do_not_underflow() {
        let m = two_point();
        let v = h_probability(&m, 60.0);
        assert_eq!(v.h, 1.0);
        assert!(v.null > 0.0 && v.null < 1e-40);
        let v = h_probability(&m, -60.0);
        assert!(v.h > 0.0 && v.h < 1e-40);
    }

    #[test]
    fn inversion_examples() {
        let m = two_point();
        assert!(z_for_h(&m, 0.5).unwrap().abs() < 1e-8);
        let z = z_for_h(&m, pdf(1.0) / (pdf(1.0) + pdf(3.0))).unwrap();
        assert!((z - 2.0).abs() < 1e-8);
        assert!(matches!(z_for_h(&m, 1.0), Err(Error::OutOfRange { .. })));
        assert!(z_for_h(&PriorModel::point_mass(1.0), 0.5).is_err());
    }

    #[test]
    fn resolves_threshold_policy() {
        let p = resolve_policy(&RejectionPolicy::h_threshold(0.5), 2, &two_point()).unwrap();
        let cz = p.critical_z.unwrap();
        assert_eq!(cz.len(), 2);
        assert!(cz[0].abs() < 1e-8);
        let fixed = RejectionPolicy::alpha_level(0.025);
        assert_eq!(resolve_policy(&fixed, 1, &two_point()).unwrap(), fixed);
    }

    #[test]
    fn curve_rejects_unsorted_grid() {
        assert!(h_curve(&two_point(), &[0.0, 1.0, 0.5]).is_err());
        let c = h_curve(&two_point(), &[-1.0, 0.0, 1.0]).unwrap();
        assert!(c.h_values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn bands_bracket_and_export() {
        let c = h_curve(&two_point(), &[0.0, 1.0]).unwrap();
        let c = c.with_bands(vec![0.4, 0.9], vec![0.6, 0.85]).unwrap();
        let hi = c.ci_high.as_ref().unwrap();
        assert!(hi[1] >= c.h_values[1]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("z,h,ci_low,ci_high\n0,0.5,0.4,0.6\n"));
        let svg = c.to_svg();
        assert!(svg.contains("stroke-dasharray") && svg.contains("viewBox=\"0 0 800 500\""));
    }

    proptest! {
        #[test]
        fn monotone_for_random_priors(masses in proptest::collection::vec(0.0f64..1.0, 2..40), scale in 0.2f64..2.0) {
            prop_assume!(masses.iter().sum::<f64>() > 0.0);
            let grid: Vec<f64> = (0..masses.len()).map(|j| scale * (j as f64 - masses.len() as f64 / 2.0)).collect();
            let m = PriorModel::from_masses(grid, masses).unwrap();
            let eval = HEvaluator::new(&m);
            let mut prev = 0.0;
            for k in 0..400 {
                let v = eval.eval(-10.0 + 0.05 * k as f64);
                prop_assert!((0.0..=1.0).contains(&v.h));
                prop_assert!(v.h >= prev - 1e-9);
                prev = v.h;
            }
        }

        #[test]
        fn inversion_round_trip(z in -2.0f64..4.0) {
            let m = two_point();
            let back = z_for_h(&m, h_probability(&m, z).h).unwrap();
            prop_assert!((back - z).abs() < 1e-6);
        }
    }
}
