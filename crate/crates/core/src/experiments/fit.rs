//! Log-space least squares for C eps^p and C eps^p |log eps|.

use serde::{Deserialize, Serialize};

use crate::error::{pre, LabError, Result};
use crate::linalg::least_squares_line;

pub const MIN_PAIRS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// C eps^p
    Power,
    /// C eps^p |log eps|
    PowerLog,
}

impl RateModel {
    pub const ALL: [RateModel; 2] = [RateModel::Power, RateModel::PowerLog];

    fn shape(self, eps: f64) -> f64 {
        match self {
            RateModel::Power => 1.0,
            RateModel::PowerLog => eps.ln().abs(),
        }
    }

    pub fn eval(self, c: f64, p: f64, eps: f64) -> f64 {
        c * eps.powf(p) * self.shape(eps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: RateModel,
    pub p: f64,
    pub c: f64,
    /// RMS of the log residuals.
    pub residual: f64,
    /// max |p_loo - p| over leave-one-out refits.
    pub loo_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub fits: Vec<ModelFit>,
    /// Lower residual wins; ties go to the plain power.
    pub preferred: RateModel,
}

impl RateFit {
    pub fn get(&self, model: RateModel) -> &ModelFit {
        self.fits.iter().find(|f| f.model == model).expect("both models are fitted")
    }

    pub fn best(&self) -> &ModelFit {
        self.get(self.preferred)
    }
}

fn fit_one(eps: &[f64], vals: &[f64], model: RateModel) -> (f64, f64, f64) {
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = eps.iter().zip(vals).map(|(&e, &v)| v.ln() - model.shape(e).ln()).collect();
    let (p, b) = least_squares_line(&x, &y);
    let ss: f64 = x.iter().zip(&y).map(|(xi, yi)| (yi - p * xi - b).powi(2)).sum();
    (p, b.exp(), (ss / x.len() as f64).sqrt())
}

fn fit_model(eps: &[f64], vals: &[f64], model: RateModel) -> ModelFit {
    let (p, c, residual) = fit_one(eps, vals, model);
    let mut spread = 0.0f64;
    for skip in 0..eps.len() {
        let e: Vec<f64> = eps.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, v)| *v).collect();
        let v: Vec<f64> = vals.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, v)| *v).collect();
        spread = spread.max((fit_one(&e, &v, model).0 - p).abs());
    }
    ModelFit { model, p, c, residual, loo_spread: spread }
}

/// Fits both models to (eps, value) pairs.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    pre(pairs.len() >= MIN_PAIRS, || format!("{} pairs, need at least {MIN_PAIRS}", pairs.len()))?;
    if let Some((e, v)) = pairs.iter().find(|(e, v)| !(*v > 0.0 && v.is_finite()) || !(*e > 0.0 && *e < 1.0)) {
        return Err(LabError::Precondition(format!("pair ({e:e}, {v:e}) needs eps in (0, 1) and a positive value")));
    }
    let eps: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let vals: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let fits: Vec<ModelFit> = RateModel::ALL.iter().map(|&m| fit_model(&eps, &vals, m)).collect();
    let preferred = if fits[1].residual < fits[0].residual * (1.0 - 1e-9) - 1e-14 {
        RateModel::PowerLog
    } else {
        RateModel::Power
    };
    Ok(RateFit { fits, preferred })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps() -> Vec<f64> {
        (3..=7).map(|k| 0.5f64.powi(k)).collect()
    }

    #[test]
    fn exact_power_recovered() {
        let pairs: Vec<(f64, f64)> = eps().iter().map(|&e| (e, 3.0 * e)).collect();
        let f = fit_rate(&pairs).unwrap();
        assert_eq!(f.preferred, RateModel::Power);
        assert!((f.best().p - 1.0).abs() < 1e-12);
        assert!((f.best().c - 3.0).abs() < 1e-10);
        assert!(f.best().residual < 1e-12);
    }

    #[test]
    fn log_corrected_data_prefers_log_model() {
        let pairs: Vec<(f64, f64)> = eps().iter().map(|&e| (e, 0.7 * e * e.ln().abs())).collect();
        let f = fit_rate(&pairs).unwrap();
        assert_eq!(f.preferred, RateModel::PowerLog);
        assert!((f.best().p - 1.0).abs() < 0.05);
        assert!(f.get(RateModel::Power).residual > 1e-3);
    }

    #[test]
    fn bad_inputs_rejected() {
        let pairs: Vec<(f64, f64)> = eps().iter().take(3).map(|&e| (e, e)).collect();
        assert!(fit_rate(&pairs).is_err());
        let mut pairs: Vec<(f64, f64)> = eps().iter().map(|&e| (e, e)).collect();
        pairs[2].1 = 0.0;
        assert!(fit_rate(&pairs).is_err());
    }

    #[test]
    fn refit_is_deterministic() {
        let pairs: Vec<(f64, f64)> = eps().iter().map(|&e| (e, e.powf(1.5) * (1.0 + 0.1 * e))).collect();
        assert_eq!(fit_rate(&pairs).unwrap(), fit_rate(&pairs).unwrap());
    }
}
