use fvsr_core::costmodel::{
    calibrate_constants, dominance_ratio, flops_estimate, measure_pipeline, CodecConstants,
    StrideSpec, ToyDenoiser, VolumeSpec,
};
use fvsr_core::lbg::explicit_factor;
use fvsr_core::vae::{init_f16_from_f8, ChannelExpand, HeadVariant, VaeConfig, VaeModel};
use fvsr_tensor::{Rng, Tensor};
use proptest::prelude::*;

fn toy() -> (VaeModel<f64>, ToyDenoiser<f64>) {
    let cfg = VaeConfig::default();
    (
        VaeModel::new(cfg, 0).unwrap(),
        ToyDenoiser::new(cfg.latent_channels, 4 * cfg.latent_channels, 1),
    )
}

fn frame(side: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::uniform([3, side, side], 0.0, 1.0, rng)
}

#[test]
fn calibrated_constants_predict_unseen_size() {
    let (model, den) = toy();
    let mut rng = Rng::new(0);
    let f = model.config.f_enc;
    let measure = |side, rng: &mut Rng| {
        measure_pipeline(&model, &den, &frame(side, rng), 1)
            .unwrap()
            .measurement(f)
            .unwrap()
    };
    let fit = calibrate_constants(&[measure(64, &mut rng), measure(128, &mut rng)]).unwrap();
    let held = measure(96, &mut rng);
    let pred = flops_estimate(&held.volume, &held.strides, &fit.constants).unwrap();
    for ((stage, p), (_, m)) in pred.stages().into_iter().zip(held.macs.stages()) {
        assert!(
            (p - m).abs() <= 0.1 * m,
            "{stage}: predicted {p}, measured {m}"
        );
    }
}

#[test]
fn asymmetric_pipeline_is_cheaper_at_equal_output() {
    let (f8, den) = toy();
    let f16 =
        init_f16_from_f8(&f8, HeadVariant::PixelShuffle, ChannelExpand::Duplicate, 2).unwrap();
    let lr = frame(32, &mut Rng::new(1));
    let sym = measure_pipeline(&f8, &den, &lr, explicit_factor(4, &f8.config).unwrap()).unwrap();
    let asym = measure_pipeline(&f16, &den, &lr, explicit_factor(4, &f16.config).unwrap()).unwrap();
    assert_eq!(sym.output, vec![3, 128, 128]);
    assert_eq!(asym.output, sym.output);
    assert_eq!(asym.codec_input, vec![3, 64, 64]);
    assert_eq!(4 * asym.tokens, sym.tokens);
    assert!(asym.total_macs() < sym.total_macs());
}

#[test]
fn paper_strides_give_dominance_256() {
    let s = StrideSpec::new(4, 8).unwrap();
    assert_eq!(
        dominance_ratio(&s, &CodecConstants::uniform(3.5)).unwrap(),
        256.0
    );
}

fn constants() -> impl Strategy<Value = CodecConstants> {
    prop::array::uniform6(0.0f64..1e4).prop_map(|k| CodecConstants {
        kappa_e: k[0],
        kappa_t: k[1],
        kappa_d: k[2],
        mu_e: k[3],
        mu_t: k[4],
        mu_d: k[5],
    })
}

proptest! {
    #[test]
    fn flops_are_linear_in_volume_and_constants(
        c in constants(),
        (t, h, w) in (1usize..16, 8usize..256, 8usize..256),
        s_t in 1usize..4,
        s_s in 1usize..8,
        k in 0.0f64..10.0,
    ) {
        let v = VolumeSpec::new(t, h, w).unwrap();
        let s = StrideSpec::new(s_t, s_s).unwrap();
        prop_assume!(s.latent_volume(&v).is_ok());
        let base = flops_estimate(&v, &s, &c).unwrap();
        let doubled = flops_estimate(&VolumeSpec::new(2 * t, h, w).unwrap(), &s, &c).unwrap();
        let scaled = CodecConstants { kappa_e: k * c.kappa_e, kappa_t: k * c.kappa_t, kappa_d: k * c.kappa_d, ..c };
        let scaled = flops_estimate(&v, &s, &scaled).unwrap();
        for ((b, d), sc) in base.stages().iter().zip(doubled.stages()).zip(scaled.stages()) {
            prop_assert!((d.1 - 2.0 * b.1).abs() <= 1e-9 * b.1.abs().max(1.0));
            prop_assert!((sc.1 - k * b.1).abs() <= 1e-9 * (k * b.1).abs().max(1.0));
        }
        prop_assert_eq!(base.total, base.encoder + base.denoiser + base.decoder);
    }

    #[test]
    fn dominance_at_least_divisor_when_decoder_heavier(
        kt in 1e-3f64..1e3,
        extra in 0.0f64..1e3,
        s_t in 1usize..8,
        s_s in 1usize..16,
    ) {
        let c = CodecConstants { kappa_t: kt, kappa_d: kt + extra, ..CodecConstants::uniform(1.0) };
        let s = StrideSpec::new(s_t, s_s).unwrap();
        prop_assert!(dominance_ratio(&s, &c).unwrap() >= s.divisor() as f64 * (1.0 - 1e-12));
    }

    #[test]
    fn calibration_round_trip(c in constants(), t in 1usize..8) {
        let s = StrideSpec::new(1, 8).unwrap();
        let ms: Vec<_> = [(t, 64, 64), (t + 1, 128, 64)].into_iter().map(|(t, h, w)| {
            let v = VolumeSpec::new(t, h, w).unwrap();
            fvsr_core::costmodel::Measurement {
                volume: v,
                strides: s,
                macs: flops_estimate(&v, &s, &c).unwrap(),
                activations: fvsr_core::costmodel::act_max_estimate(&v, &s, &c).unwrap().stages,
            }
        }).collect();
        let fit = calibrate_constants(&ms).unwrap();
        for ((_, got), (_, want)) in fit.constants.named().into_iter().zip(c.named()) {
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300));
        }
    }
}
