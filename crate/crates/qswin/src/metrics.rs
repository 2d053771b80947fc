//! Regression metrics: mean absolute error, mean squared error, and
//! Pearson's correlation coefficient.

use crate::error::{Error, Result};

/// Metric triple over `n` prediction/label pairs.
#[derive(Debug, Clone, Copy)]
pub struct MetricsResult {
    pub mae: f64,
    pub mse: f64,
    pub pcc: f64,
    pub n: usize,
}

fn check_lengths(op: &'static str, y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::contract(op, "empty input"));
    }
    if y.len() != yhat.len() {
        return Err(Error::Shape {
            op,
            lhs: vec![y.len()],
            rhs: vec![yhat.len()],
        });
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths("mae", y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths("mse", y, yhat)?;
    Ok(y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum::<f64>()
        / y.len() as f64)
}

/// Pearson correlation; zero variance in either argument is an error
/// rather than a NaN.
pub fn pcc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths("pcc", y, yhat)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vh = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        let da = a - my;
        let db = b - mh;
        cov += da * db;
        vy += da * da;
        vh += db * db;
    }
    if vy == 0.0 || vh == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in at least one argument".into(),
        ));
    }
    Ok(cov / (vy.sqrt() * vh.sqrt()))
}

/// All three metrics at once.
pub fn compute(y: &[f64], yhat: &[f64]) -> Result<MetricsResult> {
    Ok(MetricsResult {
        mae: mae(y, yhat)?,
        mse: mse(y, yhat)?,
        pcc: pcc(y, yhat)?,
        n: y.len(),
    })
}
