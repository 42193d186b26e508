//! Least-squares decay fits for error curves.

use serde::Serialize;

use crate::error::{Error, Result};

/// `y ≈ a·e^{−b t}`, fitted on `ln y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    /// Coefficient of determination of the log-linear regression.
    pub r2: f64,
    pub used: usize,
    pub dropped: usize,
}

/// `y ≈ a / T`, fitted as a regression of `y` on `1/T` through the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InverseFit {
    pub a: f64,
    pub r2: f64,
    pub used: usize,
}

fn r_squared(ys: &[f64], predicted: impl Iterator<Item = f64>) -> f64 {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

pub fn fit_exponential(ts: &[f64], ys: &[f64]) -> Result<ExpFit> {
    fit_exponential_above(ts, ys, 0.0)
}

/// Like [`fit_exponential`] but drops every point with `y <= floor`, e.g.
/// an exact curve that has decayed into rounding noise.
pub fn fit_exponential_above(ts: &[f64], ys: &[f64], floor: f64) -> Result<ExpFit> {
    if ts.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "fit inputs differ in length: {} vs {}",
            ts.len(),
            ys.len()
        )));
    }
    let (xs, ls): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > floor && y.is_finite())
        .map(|(&t, &y)| (t, y.ln()))
        .unzip();
    let dropped = ts.len() - xs.len();
    if xs.len() < 3 {
        return Err(Error::FitFailure(format!(
            "exponential fit needs 3 positive points, {} of {} left",
            xs.len(),
            ts.len()
        )));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let ml = ls.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxl: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - ml)).sum();
    if sxx == 0.0 {
        return Err(Error::FitFailure("all points share one abscissa".into()));
    }
    let slope = sxl / sxx;
    let intercept = ml - slope * mx;
    let r2 = r_squared(&ls, xs.iter().map(|x| intercept + slope * x));
    Ok(ExpFit {
        a: intercept.exp(),
        b: -slope,
        r2,
        used: xs.len(),
        dropped,
    })
}

pub fn fit_inverse(ts: &[f64], ys: &[f64]) -> Result<InverseFit> {
    if ts.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "fit inputs differ in length: {} vs {}",
            ts.len(),
            ys.len()
        )));
    }
    let (xs, vs): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(ys)
        .filter(|(&t, y)| t > 0.0 && y.is_finite())
        .map(|(&t, &y)| (1.0 / t, y))
        .unzip();
    if xs.is_empty() {
        return Err(Error::FitFailure("inverse fit needs a point with T > 0".into()));
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&vs).map(|(x, y)| x * y).sum();
    let a = sxy / sxx;
    let r2 = r_squared(&vs, xs.iter().map(|x| a * x));
    Ok(InverseFit { a, r2, used: xs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_noiseless_exponential() {
        let ts: Vec<f64> = (0..=50).map(f64::from).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-0.1 * t).exp()).collect();
        let fit = fit_exponential(&ts, &ys).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-9);
        assert!((fit.b - 0.1).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.dropped, 0);
    }

    #[test]
    fn recovers_noiseless_inverse() {
        let ts: Vec<f64> = (1..=100).map(f64::from).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 / t).collect();
        let fit = fit_inverse(&ts, &ys).unwrap();
        assert!((fit.a - 3.0).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drops_nonpositive_points() {
        let ts = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 0.0, 0.25, -1.0, 0.0625];
        let fit = fit_exponential(&ts, &ys).unwrap();
        assert_eq!(fit.dropped, 2);
        assert!((fit.b - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(
            fit_exponential(&ts, &[0.0; 5]),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn floor_excludes_rounding_noise() {
        let ts: Vec<f64> = (0..40).map(f64::from).collect();
        let mut ys: Vec<f64> = ts.iter().map(|t| 0.5f64.powf(*t)).collect();
        ys[35] = 1e-17;
        ys[36] = 3e-16;
        let fit = fit_exponential_above(&ts, &ys, 1e-10).unwrap();
        assert!((fit.b - 2f64.ln()).abs() < 1e-9);
        assert_eq!(fit.used, 34);
    }
}
