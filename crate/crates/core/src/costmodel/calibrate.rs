use super::{CodecConstants, StageBreakdown, StrideSpec, VolumeSpec};
use crate::{CoreError, Result};

/// Measured per-stage MACs and activation bytes of one pipeline run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub volume: VolumeSpec,
    pub strides: StrideSpec,
    pub macs: StageBreakdown,
    pub activations: StageBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub constants: CodecConstants,
    /// Worst relative residual per stage over the fitted measurements.
    pub mac_residuals: StageBreakdown,
    pub act_residuals: StageBreakdown,
}

/// `Σ xᵢyᵢ / Σ xᵢ²`, the least-squares slope through the origin.
fn slope(points: &[(f64, f64)]) -> f64 {
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    sxy / sxx
}

fn rel_residual(pred: f64, meas: f64) -> f64 {
    if pred == meas {
        0.0
    } else {
        (pred - meas).abs() / meas.abs().max(pred.abs())
    }
}

/// Fits every constant as a per-voxel slope: encoder and decoder against
/// `V`, the denoiser against the latent volume.
pub fn calibrate_constants(measurements: &[Measurement]) -> Result<Calibration> {
    if measurements.len() < 2 {
        return Err(CoreError::Degenerate(format!(
            "calibration needs at least 2 measurements, got {}",
            measurements.len()
        )));
    }
    let first = measurements[0].volume.voxels();
    if measurements.iter().all(|m| m.volume.voxels() == first) {
        return Err(CoreError::Degenerate(format!(
            "all measurements share the volume {first}; constants are not identifiable"
        )));
    }
    let mut rows = Vec::with_capacity(measurements.len());
    for m in measurements {
        rows.push((
            m.volume.voxels() as f64,
            m.strides.latent_volume(&m.volume)?,
            m,
        ));
    }
    let stage = |b: &StageBreakdown| [b.encoder, b.denoiser, b.decoder];
    let fit_set = |sel: fn(&Measurement) -> StageBreakdown| -> ([f64; 3], StageBreakdown) {
        let k: Vec<f64> = (0..3)
            .map(|i| {
                let pts: Vec<_> = rows
                    .iter()
                    .map(|(v, lat, m)| (if i == 1 { *lat } else { *v }, stage(&sel(m))[i]))
                    .collect();
                slope(&pts)
            })
            .collect();
        let mut worst = [0.0f64; 4];
        for (v, lat, m) in &rows {
            let pred = StageBreakdown::new(k[0] * v, k[1] * lat, k[2] * v);
            let meas = sel(m);
            let r = [
                rel_residual(pred.encoder, meas.encoder),
                rel_residual(pred.denoiser, meas.denoiser),
                rel_residual(pred.decoder, meas.decoder),
                rel_residual(pred.total, meas.total),
            ];
            for (w, x) in worst.iter_mut().zip(r) {
                *w = w.max(x);
            }
        }
        let res = StageBreakdown {
            encoder: worst[0],
            denoiser: worst[1],
            decoder: worst[2],
            total: worst[3],
        };
        ([k[0], k[1], k[2]], res)
    };
    let (kappa, mac_residuals) = fit_set(|m| m.macs);
    let (mu, act_residuals) = fit_set(|m| m.activations);
    Ok(Calibration {
        constants: CodecConstants {
            kappa_e: kappa[0],
            kappa_t: kappa[1],
            kappa_d: kappa[2],
            mu_e: mu[0],
            mu_t: mu[1],
            mu_d: mu[2],
        },
        mac_residuals,
        act_residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{act_max_estimate, flops_estimate};

    fn synthetic(c: &CodecConstants, v: VolumeSpec, s: StrideSpec) -> Measurement {
        Measurement {
            volume: v,
            strides: s,
            macs: flops_estimate(&v, &s, c).unwrap(),
            activations: act_max_estimate(&v, &s, c).unwrap().stages,
        }
    }

    #[test]
    fn exact_measurements_recover_constants() {
        let c = CodecConstants {
            kappa_e: 1234.5,
            kappa_t: 9876.25,
            kappa_d: 4321.0,
            mu_e: 12.0,
            mu_t: 300.5,
            mu_d: 48.0,
        };
        let s = StrideSpec::new(4, 8).unwrap();
        let ms: Vec<_> = [(8, 64, 64), (4, 128, 96), (12, 32, 256)]
            .into_iter()
            .map(|(t, h, w)| synthetic(&c, VolumeSpec::new(t, h, w).unwrap(), s))
            .collect();
        let fit = calibrate_constants(&ms).unwrap();
        for ((name, got), (_, want)) in fit.constants.named().into_iter().zip(c.named()) {
            assert!(
                (got - want).abs() <= 1e-10 * want.abs(),
                "{name}: {got} vs {want}"
            );
        }
        assert!(fit.mac_residuals.total < 1e-12);
    }

    #[test]
    fn underdetermined_fits_are_rejected() {
        let c = CodecConstants::uniform(1.0);
        let s = StrideSpec::new(1, 8).unwrap();
        let a = synthetic(&c, VolumeSpec::new(1, 64, 64).unwrap(), s);
        assert!(matches!(
            calibrate_constants(&[a]),
            Err(CoreError::Degenerate(_))
        ));
        let b = synthetic(&c, VolumeSpec::new(4, 32, 32).unwrap(), s);
        assert!(matches!(
            calibrate_constants(&[a, b]),
            Err(CoreError::Degenerate(_))
        ));
    }
}
