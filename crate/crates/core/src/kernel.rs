//! Stationary covariance kernels C(t1, t2) = C(|t1 - t2|).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationKernel {
    /// C(t) = alpha^2 exp(-|t| / tau_c)
    OrnsteinUhlenbeck { alpha: f64, tau_c: f64 },
    Tabulated(KernelTable),
}

impl CorrelationKernel {
    pub fn ornstein_uhlenbeck(alpha: f64, tau_c: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha = {alpha} is not finite")));
        }
        if !(tau_c.is_finite() && tau_c > 0.0) {
            return Err(Error::InvalidInput(format!("tau_c = {tau_c} must be positive and finite")));
        }
        Ok(Self::OrnsteinUhlenbeck { alpha, tau_c })
    }

    /// C(t1, t2); stationarity is structural.
    pub fn covariance(&self, t1: f64, t2: f64) -> f64 {
        self.at_lag(t1 - t2)
    }

    pub fn at_lag(&self, lag: f64) -> f64 {
        let lag = lag.abs();
        match self {
            Self::OrnsteinUhlenbeck { alpha, tau_c } => alpha * alpha * (-lag / tau_c).exp(),
            Self::Tabulated(table) => table.at_lag(lag),
        }
    }

    /// C(0)
    pub fn variance(&self) -> f64 {
        self.at_lag(0.0)
    }

    /// One-sided derivative C'(0+). The symmetric kernel C(|t - s|) has a derivative
    /// jump of 2 C'(0+) across the diagonal.
    pub fn cusp_slope(&self) -> f64 {
        match self {
            Self::OrnsteinUhlenbeck { alpha, tau_c } => -alpha * alpha / tau_c,
            Self::Tabulated(table) => (table.values[1] - table.values[0]) / table.spacing,
        }
    }

    /// Largest lag at which the kernel is defined.
    pub fn max_lag(&self) -> f64 {
        match self {
            Self::OrnsteinUhlenbeck { .. } => f64::INFINITY,
            Self::Tabulated(table) => table.max_lag(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::OrnsteinUhlenbeck { alpha, tau_c } => {
                format!("ornstein-uhlenbeck alpha={alpha} tau_c={tau_c}")
            }
            Self::Tabulated(t) => {
                format!("tabulated spacing={} points={}", t.spacing, t.values.len())
            }
        }
    }
}

/// C(k * spacing) for k = 0..n, linearly interpolated between entries.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    spacing: f64,
    values: Vec<f64>,
}

impl KernelTable {
    pub fn new(spacing: f64, values: Vec<f64>) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidInput(format!("table spacing {spacing} must be positive")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidInput("kernel table needs at least two entries".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel table entry {v} is not finite")));
        }
        let c0 = values[0];
        if c0 < 0.0 {
            return Err(Error::InvalidInput(format!("kernel variance C(0) = {c0} is negative")));
        }
        // any positive semidefinite stationary kernel has C(0) >= |C(t)|
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| v.abs() > c0 * (1.0 + 1e-12)) {
            return Err(Error::InvalidInput(format!(
                "kernel table entry {k} has |C| = {} above C(0) = {c0}",
                v.abs()
            )));
        }
        Ok(Self { spacing, values })
    }

    /// Parse `lag, value` rows. Blank lines and `#` comments are skipped, and a
    /// non-numeric first row is treated as a header. Lags must start at zero and
    /// be uniformly spaced.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        let mut seen_data = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("expected `lag, value`, found {} fields", fields.len()),
                });
            }
            let parsed = (fields[0].parse::<f64>(), fields[1].parse::<f64>());
            match parsed {
                (Ok(lag), Ok(value)) => {
                    seen_data = true;
                    rows.push((line_no, lag, value));
                }
                _ if !seen_data && rows.is_empty() && fields[0].parse::<f64>().is_err() => {
                    // header row
                    seen_data = true;
                }
                _ => {
                    return Err(Error::Config {
                        line: line_no,
                        message: format!("malformed number in `{line}`"),
                    })
                }
            }
        }
        if rows.len() < 2 {
            return Err(Error::InvalidInput("kernel table needs at least two rows".into()));
        }
        let (first_line, lag0, _) = rows[0];
        if lag0 != 0.0 {
            return Err(Error::Config { line: first_line, message: format!("first lag must be 0, got {lag0}") });
        }
        let spacing = rows[1].1 - rows[0].1;
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config { line: rows[1].0, message: "lags must be increasing".into() });
        }
        for (k, &(line, lag, _)) in rows.iter().enumerate() {
            let expected = k as f64 * spacing;
            if !lag.is_finite() || (lag - expected).abs() > 1e-9 * expected.max(spacing) {
                return Err(Error::Config {
                    line,
                    message: format!("lag {lag} breaks uniform spacing {spacing}"),
                });
            }
        }
        Self::new(spacing, rows.into_iter().map(|(_, _, v)| v).collect())
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_lag(&self) -> f64 {
        self.spacing * (self.values.len() - 1) as f64
    }

    fn at_lag(&self, lag: f64) -> f64 {
        let x = lag / self.spacing;
        let last = self.values.len() - 1;
        if x >= last as f64 {
            return self.values[last];
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }
}
