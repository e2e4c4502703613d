//! Glue between corpus, features, targets and the mask estimator.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::audio::AudioBuffer;
use crate::cochlea::{self, Cochleagram};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMatrix};
use crate::masks::{self, Mask, MaskDomain};
use crate::mixer::NoisyMixture;
use crate::neural::{Dataset, FnnModel, LossKind, Targets};

/// Gammatone-domain training targets for one mixture.
///
/// Magnitudes are unit norms (square roots of unit energies). The PSA
/// "phase" term of a real subband unit is the normalised correlation between
/// the clean and noisy unit.
pub fn unit_targets(
    noisy: &Cochleagram,
    clean: &Cochleagram,
    noise: &Cochleagram,
    loss: LossKind,
    beta: f64,
) -> Result<Targets> {
    let ey = cochlea::unit_energy(noisy);
    let ex = cochlea::unit_energy(clean);
    let ev = cochlea::unit_energy(noise);
    Ok(match loss {
        LossKind::MaskMse => Targets::Mask(masks::irm(&ex, &ev, beta, MaskDomain::Gammatone)?.into_grid()),
        LossKind::SignalApprox => Targets::SignalApprox {
            noisy: ey.mapv(f64::sqrt),
            clean: ex.mapv(f64::sqrt),
            noise: ev.mapv(f64::sqrt),
        },
        LossKind::Psa => {
            let cos = Array2::from_shape_fn(ey.dim(), |(c, m)| {
                let (x, y) = (clean.unit(c, m), noisy.unit(c, m));
                let den = (ex[(c, m)] * ey[(c, m)]).sqrt();
                if den > 0.0 { (x.dot(&y) / den).clamp(-1.0, 1.0) } else { 0.0 }
            });
            Targets::Psa { noisy: ey.mapv(f64::sqrt), clean: ex.mapv(f64::sqrt), cos_phase: cos }
        }
    })
}

/// Features and gammatone targets for one mixture.
pub fn mixture_dataset(
    mix: &NoisyMixture,
    extractor: &FeatureExtractor,
    loss: LossKind,
    beta: f64,
) -> Result<Dataset> {
    let cfg = cochlea::unit_config(mix.mixture.sample_rate());
    let bank = &extractor.bank;
    let noisy = cochlea::analyze(&mix.mixture, bank, &cfg)?;
    let clean = cochlea::analyze(&mix.clean, bank, &cfg)?;
    let noise = cochlea::analyze(&mix.scaled_noise, bank, &cfg)?;
    let features = extractor.extract_with(&mix.mixture, &noisy)?;
    Dataset::new(features.data, unit_targets(&noisy, &clean, &noise, loss, beta)?)
}

/// [`mixture_dataset`] over many mixtures, in parallel, joined in input order.
pub fn build_training_set(
    mixtures: &[NoisyMixture],
    extractor: &FeatureExtractor,
    loss: LossKind,
    beta: f64,
) -> Result<Dataset> {
    if mixtures.is_empty() {
        return Err(Error::EmptyInput("no mixtures".into()));
    }
    let parts = mixtures
        .par_iter()
        .map(|m| mixture_dataset(m, extractor, loss, beta))
        .collect::<Result<Vec<_>>>()?;
    Dataset::concat(&parts)
}

/// Estimated gammatone mask for a noisy signal.
pub fn estimate_mask(noisy: &AudioBuffer, model: &FnnModel, extractor: &FeatureExtractor) -> Result<(Mask, Cochleagram)> {
    let coch = cochlea::analyze(noisy, &extractor.bank, &cochlea::unit_config(noisy.sample_rate()))?;
    let features: FeatureMatrix = extractor.extract_with(noisy, &coch)?;
    Ok((model.predict_mask(&features)?, coch))
}

/// Mask estimation followed by gammatone resynthesis.
pub fn enhance_fnn(noisy: &AudioBuffer, model: &FnnModel, extractor: &FeatureExtractor) -> Result<AudioBuffer> {
    if model.domain != MaskDomain::Gammatone {
        return Err(Error::Domain { expected: MaskDomain::Gammatone.name(), actual: model.domain.name() });
    }
    let (mask, coch) = estimate_mask(noisy, model, extractor)?;
    let channels = masks::apply_mask_cochleagram(&mask, &coch)?;
    cochlea::synthesize(&channels, &extractor.bank)
}

/// Mean squared difference between two masks of the same shape.
pub fn mask_mse(a: &Mask, b: &Mask) -> Result<f64> {
    crate::error::ensure_shape("mask", a.dim(), b.dim())?;
    let mut s = 0.0;
    Zip::from(a.grid()).and(b.grid()).for_each(|x, y| s += (x - y) * (x - y));
    Ok(s / a.grid().len().max(1) as f64)
}
