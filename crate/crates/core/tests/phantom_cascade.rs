mod common;

use ndarray::{s, Array2, Axis};
use oct_cascade::cascade::{
    self, run_cascade, BoundarySource, InfusionConfig, ShadowSource, VesselBackendConfig,
};
use oct_cascade::enface::{self, ShadowConfig};
use oct_cascade::io;
use oct_cascade::layers::{self, DpConfig};
use oct_cascade::metrics::MetricsReport;
use oct_cascade::model::{Boundary, BoundarySet, OctVolume, PixelMask};
use oct_cascade::phantom::{generate, PhantomConfig, Scale};

fn desk(seed: u64, noise: f64) -> PhantomConfig {
    PhantomConfig {
        seed,
        noise_sigma: noise,
        ..PhantomConfig::default_for(Scale::Desk)
    }
}

/// Mean of ceil(RPE_UPPER)..=floor(BM) in every column, from the true surfaces.
fn rpe_band_means(v: &OctVolume, b: &BoundarySet) -> Array2<f64> {
    let d = v.dims();
    Array2::from_shape_fn((d.n_slices, d.width), |(s, x)| {
        let lo = b.depth(Boundary::RpeUpper, s, x).ceil() as usize;
        let hi = b.depth(Boundary::Bm, s, x).floor() as usize;
        let col = v.data().slice(s![s, lo..=hi, x]);
        col.iter().map(|&v| v as f64).sum::<f64>() / col.len() as f64
    })
}

fn split_means(values: &Array2<f64>, mask: &PixelMask) -> (f64, f64) {
    let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
    for (&v, &m) in values.iter().zip(mask.data()) {
        if m {
            a += v;
            na += 1;
        } else {
            b += v;
            nb += 1;
        }
    }
    (a / na as f64, b / nb as f64)
}

#[test]
fn shadows_darken_the_rpe_band_only_under_vessels() {
    for seed in 0..3 {
        let cfg = desk(seed, 0.0);
        let (shadowed, gt) = generate(&cfg).unwrap();
        let (clear, _) = generate(&PhantomConfig {
            shadow_attenuation: 1.0,
            ..cfg.clone()
        })
        .unwrap();
        let with = rpe_band_means(&shadowed, &gt.boundaries);
        let without = rpe_band_means(&clear, &gt.boundaries);
        for ((s, x), &on) in gt.shadow_footprint.data().indexed_iter() {
            if on {
                assert!(
                    with[[s, x]] < without[[s, x]],
                    "seed {seed} ({s}, {x}) not darker"
                );
            } else {
                let a = shadowed.data().slice(s![s, .., x]);
                let b = clear.data().slice(s![s, .., x]);
                assert_eq!(
                    a, b,
                    "seed {seed}: column ({s}, {x}) outside the footprint changed"
                );
            }
        }
    }
}

#[test]
fn footprint_rpe_contrast_is_at_least_point_15() {
    let (v, gt) = generate(&desk(0, 0.0)).unwrap();
    let (inside, outside) = split_means(&rpe_band_means(&v, &gt.boundaries), &gt.shadow_footprint);
    assert!(outside - inside >= 0.15, "contrast {}", outside - inside);
}

#[test]
fn one_vessel_darkens_its_enface_footprint() {
    let cfg = PhantomConfig {
        n_vessels: 1,
        ..desk(3, 0.0)
    };
    let (v, gt) = generate(&cfg).unwrap();
    let e = enface::project_rpe(&v, &gt.boundaries).unwrap();
    let values = e.data().mapv(f64::from);
    let (inside, outside) = split_means(&values, &gt.shadow_footprint);
    assert!(outside - inside >= 0.1, "contrast {}", outside - inside);
}

#[test]
fn boundaries_follow_the_truth() {
    for (noise, tol) in [(0.0, 1.0), (0.03, 2.0)] {
        let cfg = desk(1, noise);
        let (v, gt) = generate(&cfg).unwrap();
        let est = layers::segment_boundaries(&v, &DpConfig::for_height(cfg.dims.height)).unwrap();
        for b in Boundary::ALL {
            let err = (est.surface(b) - gt.boundaries.surface(b))
                .mapv(f64::abs)
                .mean()
                .unwrap();
            assert!(err <= tol, "{b} error {err} at noise {noise}");
        }
    }
}

#[test]
fn shadow_detection_matches_footprint() {
    let (v, gt) = generate(&desk(2, 0.0)).unwrap();
    let e = enface::project_rpe(&v, &gt.boundaries).unwrap();
    let (mask, _) = enface::segment_shadows(&e, &ShadowConfig::default()).unwrap();
    assert!(common::dice(&mask, &gt.shadow_footprint) >= 0.9);
}

#[test]
fn score_peak_sits_on_a_vessel() {
    let cfg = desk(4, 0.0);
    let (v, gt) = generate(&cfg).unwrap();
    let priors = cascade::compute_priors(
        &v,
        &BoundarySource::Given(gt.boundaries.clone()),
        &ShadowSource::Classical(ShadowConfig::default()),
    )
    .unwrap();
    let scores = cascade::vessel_probability(
        &v,
        &gt.boundaries,
        &priors.shadow_contrast,
        &VesselBackendConfig::default(),
    )
    .unwrap();
    let band = cascade::longitudinal_mask(&gt.boundaries, cfg.dims).unwrap();
    let (mut hits, mut slices) = (0, 0);
    for s in 0..cfg.dims.n_slices {
        let truth = gt.vessel_mask.data().index_axis(Axis(0), s);
        if !truth.iter().any(|&t| t) {
            continue;
        }
        slices += 1;
        let p = scores.probability.data().index_axis(Axis(0), s);
        let inside = band.data().index_axis(Axis(0), s);
        let best = p
            .indexed_iter()
            .filter(|(idx, _)| inside[*idx])
            .fold(None::<((usize, usize), f32)>, |acc, (idx, &v)| match acc {
                Some((_, b)) if b >= v => acc,
                _ => Some((idx, v)),
            })
            .unwrap();
        if truth[best.0] {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.9 * slices as f64, "{hits}/{slices}");
}

#[test]
fn no_flags_is_plain_binarization() {
    let (v, gt) = generate(&desk(5, 0.03)).unwrap();
    let off = InfusionConfig::default().with_flags(false, false);
    let backend = VesselBackendConfig::default();
    let out = run_cascade(
        &v,
        &BoundarySource::Given(gt.boundaries.clone()),
        &ShadowSource::Classical(ShadowConfig::default()),
        &backend,
        &off,
    )
    .unwrap();
    let scores =
        cascade::vessel_probability(&v, &gt.boundaries, &out.shadow_contrast, &backend).unwrap();
    let (mask, n) = cascade::binarize_and_label(&scores.probability, &off).unwrap();
    assert_eq!(out.probability, scores.probability);
    assert_eq!((out.mask, out.component_count), (mask, n));
}

#[test]
fn transverse_prior_with_no_shadows_finds_nothing() {
    let cfg = desk(6, 0.03);
    let (v, gt) = generate(&cfg).unwrap();
    let out = run_cascade(
        &v,
        &BoundarySource::Given(gt.boundaries.clone()),
        &ShadowSource::Given(PixelMask::empty(cfg.dims.plane())),
        &VesselBackendConfig::default(),
        &InfusionConfig::default().with_flags(false, true),
    )
    .unwrap();
    assert_eq!(out.mask.count(), 0);
}

#[test]
fn priors_beat_no_priors() {
    let cfg = desk(7, 0.03);
    let (v, gt) = generate(&cfg).unwrap();
    let bs = BoundarySource::Classical(DpConfig::for_height(cfg.dims.height));
    let ss = ShadowSource::Classical(ShadowConfig::default());
    let backend = VesselBackendConfig::default();
    let iou = |inf: InfusionConfig| {
        let out = run_cascade(&v, &bs, &ss, &backend, &inf).unwrap();
        MetricsReport::evaluate(&out.mask, &gt.vessel_mask, None)
            .unwrap()
            .iou
    };
    let base = InfusionConfig::default();
    assert!(iou(base.with_flags(true, true)) > iou(base.with_flags(false, false)));
}

#[test]
fn exported_priors_import_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(8, 0.03);
    let (v, _) = generate(&cfg).unwrap();
    let b = layers::segment_boundaries(&v, &DpConfig::for_height(cfg.dims.height)).unwrap();
    let csv = dir.path().join("b.csv");
    io::write_boundaries(&b, &csv).unwrap();
    assert_eq!(layers::import_boundaries(&csv).unwrap(), b);

    let e = enface::project_rpe(&v, &b).unwrap();
    let (m, _) = enface::segment_shadows(&e, &ShadowConfig::default()).unwrap();
    let stem = dir.path().join("shadow");
    io::write_volume(&m, &stem).unwrap();
    assert_eq!(enface::import_shadow_mask(&stem).unwrap(), m);

    let all = PixelMask::new(Array2::from_elem((cfg.dims.n_slices, cfg.dims.width), true));
    io::write_volume(&all, &stem).unwrap();
    assert_eq!(enface::import_shadow_mask(&stem).unwrap(), all);
}

#[test]
fn narrow_boundaries_rejected_at_use() {
    let cfg = desk(9, 0.03);
    let (v, gt) = generate(&cfg).unwrap();
    let narrow = BoundarySet::new(
        gt.boundaries
            .into_surfaces()
            .map(|s| s.slice(s![.., ..cfg.dims.width - 1]).to_owned()),
    )
    .unwrap();
    let err = cascade::compute_priors(
        &v,
        &BoundarySource::Given(narrow),
        &ShadowSource::Classical(ShadowConfig::default()),
    )
    .unwrap_err();
    assert!(
        matches!(err, oct_cascade::Error::ShapeMismatch { .. }),
        "{err}"
    );
}
