mod common;

use common::{cabin, materials, tx};
use proptest::prelude::*;
use thzcabin::channel::{
    cfr_to_cir, extract_mpcs, omni_pdp, reflection_loss_from_power, reflection_loss_of_path,
    synthesize_cfr, synthesize_cfr_from_mpcs, ExtractConfig, MpcSource, Window,
};
use thzcabin::raytrace::trace;
use thzcabin::scene::Facet;
use thzcabin::{Aabb, AngleAxes, AngleDelayGrid, Band, Mpc, MpcSet, Scene, TraceConfig, Vec3};

fn mpc(tau_ns: f64, az: f64, zen: f64, p: f64) -> Mpc {
    Mpc {
        tau: tau_ns * 1e-9,
        azimuth_deg: az,
        zenith_deg: zen,
        power_db: p,
        order: None,
        chain: String::new(),
    }
}

fn grid_of(mpcs: &[Mpc], window: Window) -> AngleDelayGrid {
    let set = MpcSet::new(MpcSource::Synthetic, mpcs.to_vec());
    cfr_to_cir(
        &synthesize_cfr_from_mpcs(&set, Band::default(), AngleAxes::default()).unwrap(),
        window,
    )
}

/// Each planted path must be matched by one extracted path in the same angle cell.
fn assert_recovered(planted: &[Mpc], got: &MpcSet, tau_tol: f64, p_tol: f64) {
    assert_eq!(got.len(), planted.len(), "{:?}", got.paths());
    for p in planted {
        let m = got
            .paths()
            .iter()
            .filter(|m| m.azimuth_deg == p.azimuth_deg && m.zenith_deg == p.zenith_deg)
            .min_by(|a, b| {
                (a.tau - p.tau)
                    .abs()
                    .partial_cmp(&(b.tau - p.tau).abs())
                    .unwrap()
            })
            .unwrap_or_else(|| panic!("nothing extracted at {p:?}"));
        assert!((m.tau - p.tau).abs() <= tau_tol, "{} vs {}", m.tau, p.tau);
        assert!(
            (m.power_db - p.power_db).abs() <= p_tol,
            "{} vs {}",
            m.power_db,
            p.power_db
        );
    }
}

#[test]
fn measured_rx2_profile_yields_five_components() {
    let planted = [
        mpc(4.15, 60.0, 0.0, -82.91),
        mpc(4.2, 70.0, 0.0, -84.02),
        mpc(5.3, 60.0, 30.0, -97.64),
        mpc(6.4, 140.0, 30.0, -102.19),
        mpc(7.5, 290.0, 0.0, -94.13),
    ];
    for window in [Window::Rect, Window::Hann] {
        let got = extract_mpcs(&grid_of(&planted, window), &ExtractConfig::default());
        assert_recovered(&planted, &got, 0.05e-9, 0.5);
    }
}

#[test]
fn two_paths_one_bin_apart_in_one_cell_do_not_split_further() {
    let step = Band::default().delay_step();
    let planted = [
        Mpc {
            tau: 100.0 * step,
            ..mpc(0.0, 60.0, 0.0, -80.0)
        },
        Mpc {
            tau: 101.0 * step,
            ..mpc(0.0, 60.0, 0.0, -82.0)
        },
    ];
    let got = extract_mpcs(&grid_of(&planted, Window::Rect), &ExtractConfig::default());
    assert!((1..=2).contains(&got.len()));
}

fn slab_scene(material: &str) -> Scene {
    let v = |x: f64, y: f64| Vec3::new(x, y, 0.0);
    let m = material.to_string();
    let facets = vec![
        Facet::new([v(-5.0, -5.0), v(5.0, -5.0), v(5.0, 5.0)], m.clone()),
        Facet::new([v(-5.0, -5.0), v(5.0, 5.0), v(-5.0, 5.0)], m),
    ];
    let bounds = Aabb::new(Vec3::new(-5.0, -5.0, -1.0), Vec3::new(5.0, 5.0, 3.0));
    Scene::new(
        facets,
        Default::default(),
        Default::default(),
        bounds,
        materials(),
    )
    .unwrap()
}

#[test]
fn glass_single_bounce_reflection_loss() {
    let s = slab_scene("glass");
    let cfg = TraceConfig {
        max_order: 1,
        absorption_db_per_m: 0.0,
        ..TraceConfig::default()
    };
    let (a, b) = (Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.05, 0.0, 1.0));
    // gate out the line of sight as a measurement would
    let bounce: Vec<_> = trace(&s, a, b, &cfg)
        .into_iter()
        .filter(|p| p.order() == 1)
        .collect();
    assert_eq!(bounce.len(), 1);
    let grid = cfr_to_cir(
        &synthesize_cfr(&bounce, Band::default(), AngleAxes::default()).unwrap(),
        Window::Rect,
    );
    let got = extract_mpcs(&grid, &ExtractConfig::default());
    assert_eq!(got.len(), 1);
    let m = &got.paths()[0];
    let f = cfg.frequency;
    let rl = reflection_loss_from_power(m.power_db, m.tau, f, 0.0);
    assert!((rl - 2.42).abs() <= 0.5, "{rl}");
    let rl_pdp = reflection_loss_of_path(&omni_pdp(&grid), bounce[0].tau, f, 0.0).unwrap();
    assert!((rl_pdp - 2.42).abs() <= 0.5, "{rl_pdp}");
}

#[test]
fn traced_cabin_link_survives_synthesis_and_extraction() {
    let s = cabin();
    let paths = trace(
        &s,
        tx(&s, "tx1"),
        s.rx_position("rx2").unwrap(),
        &TraceConfig::default(),
    );
    let los = paths.iter().find(|p| p.is_los()).unwrap();
    let grid = cfr_to_cir(
        &synthesize_cfr(&paths, Band::default(), AngleAxes::default()).unwrap(),
        Window::Hann,
    );
    let got = extract_mpcs(&grid, &ExtractConfig::default());
    let strongest = got
        .paths()
        .iter()
        .max_by(|a, b| a.power_db.partial_cmp(&b.power_db).unwrap())
        .unwrap();
    assert!((strongest.tau - los.tau).abs() <= 0.05e-9);
    assert!((strongest.power_db - los.power_db).abs() <= 0.5);
    assert_eq!(strongest.azimuth_deg, 70.0);
}

#[test]
fn mpc_csv_pipeline_round_trip() {
    let planted = [mpc(4.15, 60.0, 0.0, -82.91), mpc(7.5, 290.0, 0.0, -94.13)];
    let mut buf = Vec::new();
    MpcSet::new(MpcSource::Measured, planted.to_vec())
        .write_csv(&mut buf, true)
        .unwrap();
    let back = MpcSet::read_csv(buf.as_slice(), MpcSource::Synthetic).unwrap();
    let got = extract_mpcs(
        &grid_of(back.paths(), Window::Rect),
        &ExtractConfig::default(),
    );
    assert_recovered(&planted, &got, 0.05e-9, 0.5);
}

/// Up to eight planted paths with distinct delays and angle cells that are not
/// face neighbors, within a 25 dB dynamic range.
fn planted_set() -> impl Strategy<Value = Vec<Mpc>> {
    (1usize..=8)
        .prop_flat_map(|k| {
            (
                proptest::sample::subsequence((0..18usize).collect::<Vec<_>>(), k),
                proptest::collection::vec((0usize..11, 20.0..1200.0f64, -25.0..0.0f64), k),
            )
        })
        .prop_map(|(az, rest)| {
            let axes = AngleAxes::default();
            az.into_iter()
                .zip(rest)
                .map(|(a, (z, bins, p))| Mpc {
                    tau: bins * Band::default().delay_step(),
                    azimuth_deg: axes.azimuth(2 * a),
                    zenith_deg: axes.zenith(z),
                    power_db: -80.0 + p,
                    order: None,
                    chain: String::new(),
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn on_bin_round_trip(set in planted_set()) {
        let step = Band::default().delay_step();
        let planted: Vec<Mpc> = set
            .into_iter()
            .map(|m| Mpc { tau: (m.tau / step).round() * step, ..m })
            .collect();
        let got = extract_mpcs(&grid_of(&planted, Window::Rect), &ExtractConfig::default());
        assert_recovered(&planted, &got, 0.05e-9, 0.5);
    }

    #[test]
    fn off_bin_round_trip_with_hann(set in planted_set()) {
        // Hann sidelobes of the strongest path sit just over 31 dB down
        let max = set.iter().map(|m| m.power_db).fold(f64::MIN, f64::max);
        let cfg = ExtractConfig { noise_floor_db: Some(max - 30.0), ..ExtractConfig::default() };
        let got = extract_mpcs(&grid_of(&set, Window::Hann), &cfg);
        assert_recovered(&set, &got, 0.05e-9, 0.5);
    }

    #[test]
    fn same_cell_paths_three_bins_apart_resolve(n in 40usize..1500, gap in 3usize..40, dp in -25.0..0.0f64) {
        let step = Band::default().delay_step();
        let planted = [
            Mpc { tau: n as f64 * step, ..mpc(0.0, 120.0, 10.0, -80.0) },
            Mpc { tau: (n + gap) as f64 * step, ..mpc(0.0, 120.0, 10.0, -80.0 + dp) },
        ];
        let got = extract_mpcs(&grid_of(&planted, Window::Rect), &ExtractConfig::default());
        assert_recovered(&planted, &got, 0.05e-9, 0.5);
    }
}
