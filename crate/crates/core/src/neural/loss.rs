//! Training objectives. Every loss is a mean over cells and returns its
//! gradient with respect to the network output.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Squared error between estimated and target mask.
    MaskMse,
    /// Dual signal approximation: `o` reconstructs the speech and `1 - o`
    /// the noise from the noisy magnitude.
    SignalApprox,
    /// Phase-sensitive approximation of `|x| cos(theta)`.
    Psa,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::MaskMse, LossKind::SignalApprox, LossKind::Psa];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::MaskMse => "mask_mse",
            LossKind::SignalApprox => "signal_approx",
            LossKind::Psa => "psa",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            LossKind::MaskMse => 0,
            LossKind::SignalApprox => 1,
            LossKind::Psa => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Result<Self> {
        Self::ALL.get(t as usize).copied().ok_or_else(|| Error::InvalidData(format!("unknown loss tag {t}")))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss '{s}'")))
    }
}

fn check(name: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    crate::error::ensure_shape(name, a.dim(), b.dim())
}

fn cells(a: &Array2<f64>) -> f64 {
    a.len().max(1) as f64
}

/// `mean((o - t)^2)`.
pub fn loss_mask_mse(output: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check("mask target", output, target)?;
    let n = cells(output);
    let diff = output - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// `mean(((1-o)|y| - |d|)^2) + mean((o|y| - |x|)^2)`.
pub fn loss_signal_approx(
    output: &Array2<f64>,
    noisy: &Array2<f64>,
    clean: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    check("noisy magnitude", output, noisy)?;
    check("clean magnitude", output, clean)?;
    check("noise magnitude", output, noise)?;
    let n = cells(output);
    let mut loss = 0.0;
    let mut grad = Array2::zeros(output.dim());
    Zip::from(&mut grad).and(output).and(noisy).and(clean).and(noise).for_each(|g, &o, &y, &x, &d| {
        let rd = (1.0 - o) * y - d;
        let rx = o * y - x;
        loss += rd * rd + rx * rx;
        *g = 2.0 * y * (rx - rd) / n;
    });
    Ok((loss / n, grad))
}

/// `mean((o|y| - |x| cos(theta))^2)`.
pub fn loss_psa(
    output: &Array2<f64>,
    noisy: &Array2<f64>,
    clean: &Array2<f64>,
    cos_phase: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    check("noisy magnitude", output, noisy)?;
    check("clean magnitude", output, clean)?;
    check("phase cosine", output, cos_phase)?;
    let n = cells(output);
    let mut loss = 0.0;
    let mut grad = Array2::zeros(output.dim());
    Zip::from(&mut grad).and(output).and(noisy).and(clean).and(cos_phase).for_each(|g, &o, &y, &x, &c| {
        let r = o * y - x * c;
        loss += r * r;
        *g = 2.0 * y * r / n;
    });
    Ok((loss / n, grad))
}

/// Training targets for one loss, frames as columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Mask(Array2<f64>),
    SignalApprox { noisy: Array2<f64>, clean: Array2<f64>, noise: Array2<f64> },
    Psa { noisy: Array2<f64>, clean: Array2<f64>, cos_phase: Array2<f64> },
}

impl Targets {
    pub fn kind(&self) -> LossKind {
        match self {
            Targets::Mask(_) => LossKind::MaskMse,
            Targets::SignalApprox { .. } => LossKind::SignalApprox,
            Targets::Psa { .. } => LossKind::Psa,
        }
    }

    pub(crate) fn parts(&self) -> Vec<&Array2<f64>> {
        match self {
            Targets::Mask(m) => vec![m],
            Targets::SignalApprox { noisy, clean, noise } => vec![noisy, clean, noise],
            Targets::Psa { noisy, clean, cos_phase } => vec![noisy, clean, cos_phase],
        }
    }

    pub(crate) fn from_parts(kind: LossKind, parts: Vec<Array2<f64>>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut next = || it.next().ok_or_else(|| Error::InvalidData("missing target part".into()));
        Ok(match kind {
            LossKind::MaskMse => Targets::Mask(next()?),
            LossKind::SignalApprox => Targets::SignalApprox { noisy: next()?, clean: next()?, noise: next()? },
            LossKind::Psa => Targets::Psa { noisy: next()?, clean: next()?, cos_phase: next()? },
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.parts()[0].dim()
    }

    pub fn frames(&self) -> usize {
        self.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for p in self.parts() {
            crate::error::ensure_shape("target parts", d, p.dim())?;
        }
        Ok(())
    }

    /// The given frames, in order.
    pub fn select(&self, cols: &[usize]) -> Targets {
        let sel = |a: &Array2<f64>| a.select(ndarray::Axis(1), cols);
        match self {
            Targets::Mask(m) => Targets::Mask(sel(m)),
            Targets::SignalApprox { noisy, clean, noise } => {
                Targets::SignalApprox { noisy: sel(noisy), clean: sel(clean), noise: sel(noise) }
            }
            Targets::Psa { noisy, clean, cos_phase } => {
                Targets::Psa { noisy: sel(noisy), clean: sel(clean), cos_phase: sel(cos_phase) }
            }
        }
    }

    /// Loss and output gradient for a batch whose columns match these targets.
    pub fn loss(&self, output: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        match self {
            Targets::Mask(m) => loss_mask_mse(output, m),
            Targets::SignalApprox { noisy, clean, noise } => loss_signal_approx(output, noisy, clean, noise),
            Targets::Psa { noisy, clean, cos_phase } => loss_psa(output, noisy, clean, cos_phase),
        }
    }
}
