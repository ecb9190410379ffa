use serde::Serialize;

use crate::error::{Error, Result};

/// Normal-approximation 95% quantile.
pub const CI95_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub stddev: Option<f64>,
    /// Half-width `CI95_Z · stddev / √r`.
    pub ci95: Option<f64>,
}

pub fn confidence_interval(values: &[f64]) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::Usage("confidence interval of an empty list".into()));
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() == 1 {
        return Ok(Interval {
            mean,
            stddev: None,
            ci95: None,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let sd = var.sqrt();
    Ok(Interval {
        mean,
        stddev: Some(sd),
        ci95: Some(CI95_Z * sd / r.sqrt()),
    })
}
