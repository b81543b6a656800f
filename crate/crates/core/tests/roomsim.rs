use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rirecon_core::metrics::schroeder_rt60;
use rirecon_core::roomsim::{
    simulate_array, simulate_rir, AbsorptionModel, Point, RoomSpec, SimConfig, SPEED_OF_SOUND,
};

fn anechoic(dims: Point) -> RoomSpec {
    RoomSpec { dims, rt60: 0.3, absorption: 1.0 }
}

fn random_point(rng: &mut ChaCha8Rng, room: &RoomSpec, margin: f64) -> Point {
    let h = room.half_extent();
    [0, 1, 2].map(|a| rng.random_range(-(h[a] - margin)..(h[a] - margin)))
}

#[test]
fn free_field_direct_path_amplitude_and_delay() {
    let room = anechoic([6.0, 6.0, 3.0]);
    let cfg = SimConfig::unfiltered(8000.0, 256);
    let rir = simulate_rir(&room, [0.5, 0.0, 0.0], [-0.5, 0.0, 0.0], &cfg).unwrap();
    let delay = 8000.0 / SPEED_OF_SOUND;
    assert!((delay - 23.32).abs() < 0.01);

    // the windowed-sinc kernel has unit DC gain, so the band-limited pulse
    // integrates to the arrival amplitude
    let area: f64 = rir.samples.iter().sum();
    let expected = 1.0 / (4.0 * PI);
    assert!((area - expected).abs() / expected < 0.01, "{area} vs {expected}");

    // centroid of the squared pulse sits on the fractional delay
    let e: f64 = rir.samples.iter().map(|s| s * s).sum();
    let centroid: f64 = rir.samples.iter().enumerate().map(|(n, s)| n as f64 * s * s).sum::<f64>() / e;
    assert!((centroid - delay).abs() <= 1.0, "{centroid}");
    let peak = (0..rir.len()).max_by(|&a, &b| rir.samples[a].abs().total_cmp(&rir.samples[b].abs())).unwrap();
    assert!((peak as f64 - delay).abs() <= 1.0);
}

#[test]
fn reciprocity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let room = RoomSpec::new([5.3, 6.1, 3.2], rng.random_range(0.2..0.6), AbsorptionModel::default()).unwrap();
        let cfg = SimConfig::new(8000.0, 1024);
        let a = random_point(&mut rng, &room, 0.3);
        let b = random_point(&mut rng, &room, 0.3);
        let ab = simulate_rir(&room, a, b, &cfg).unwrap();
        let ba = simulate_rir(&room, b, a, &cfg).unwrap();
        for (x, y) in ab.samples.iter().zip(&ba.samples) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn mirror_symmetry_about_center_plane() {
    let room = RoomSpec::new([6.0, 5.0, 3.0], 0.4, AbsorptionModel::default()).unwrap();
    let cfg = SimConfig::new(8000.0, 1024);
    let source = [0.0, 0.7, -0.2];
    let out = simulate_array(&room, source, &[[1.3, -0.4, 0.5], [-1.3, -0.4, 0.5]], &cfg).unwrap();
    for (x, y) in out[0].samples.iter().zip(&out[1].samples) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn simulation_is_bit_deterministic() {
    let room = RoomSpec::new([4.5, 7.0, 2.8], 0.35, AbsorptionModel::default()).unwrap();
    let cfg = SimConfig::new(8000.0, 1024);
    let a = simulate_rir(&room, [1.0, 0.5, 0.1], [-1.0, 0.2, 0.0], &cfg).unwrap();
    let b = simulate_rir(&room, [1.0, 0.5, 0.1], [-1.0, 0.2, 0.0], &cfg).unwrap();
    assert_eq!(
        a.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn array_simulation_matches_single_microphone_runs() {
    let room = RoomSpec::new([5.0, 5.0, 3.0], 0.3, AbsorptionModel::default()).unwrap();
    let cfg = SimConfig::new(8000.0, 512);
    let mics = [[-1.0, 0.0, 0.0], [-0.5, 0.1, 0.0], [0.8, -1.2, 0.3]];
    let arr = simulate_array(&room, [1.2, 0.4, 0.0], &mics, &cfg).unwrap();
    for (m, rir) in mics.iter().zip(&arr) {
        let single = simulate_rir(&room, [1.2, 0.4, 0.0], *m, &cfg).unwrap();
        for (x, y) in rir.samples.iter().zip(&single.samples) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn schroeder_rt60_tracks_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let dims = [rng.random_range(4.0..8.0), rng.random_range(4.0..8.0), rng.random_range(2.5..4.0)];
        let rt60 = rng.random_range(0.2..0.5);
        let room = RoomSpec::new(dims, rt60, AbsorptionModel::default()).unwrap();
        let cfg = SimConfig::new(8000.0, (rt60 * 8000.0).ceil() as usize);
        let src = random_point(&mut rng, &room, 0.5);
        let mic = random_point(&mut rng, &room, 0.5);
        let rir = simulate_rir(&room, src, mic, &cfg).unwrap();
        let est = schroeder_rt60(&rir.samples, 8000.0).seconds().unwrap();
        assert!((est - rt60).abs() / rt60 <= 0.2, "room {dims:?} target {rt60} estimate {est}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn more_absorption_never_adds_energy(
        lx in 4.0..8.0f64, ly in 4.0..8.0f64, lz in 2.5..4.0f64,
        a in 0.05..0.95f64, da in 0.01..0.5f64, seed in 0u64..1000,
    ) {
        let lo = RoomSpec { dims: [lx, ly, lz], rt60: 0.3, absorption: a };
        let hi = RoomSpec { absorption: (a + da).min(1.0), ..lo };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_point(&mut rng, &lo, 0.3);
        let mic = random_point(&mut rng, &lo, 0.3);
        let cfg = SimConfig::new(8000.0, 512);
        let e_lo = simulate_rir(&lo, src, mic, &cfg).unwrap().energy();
        let e_hi = simulate_rir(&hi, src, mic, &cfg).unwrap().energy();
        prop_assert!(e_hi <= e_lo * (1.0 + 1e-12), "{} > {}", e_hi, e_lo);
    }

    #[test]
    fn onset_follows_direct_distance(
        seed in 0u64..10_000,
    ) {
        let room = RoomSpec::new([7.0, 6.0, 3.0], 0.3, AbsorptionModel::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_point(&mut rng, &room, 0.2);
        let mic = random_point(&mut rng, &room, 0.2);
        let cfg = SimConfig::new(8000.0, 1024);
        let rir = simulate_rir(&room, src, mic, &cfg).unwrap();
        let d = (0..3).map(|a| (src[a] - mic[a]).powi(2)).sum::<f64>().sqrt();
        let direct = (d * cfg.fs / cfg.c).round() as i64;
        let first = rir.samples.iter().position(|&s| s != 0.0).unwrap() as i64;
        let half = (cfg.frac_delay_taps / 2) as i64;
        prop_assert!((first - direct).abs() <= half, "first {} direct {}", first, direct);
        prop_assert!(rir.samples.iter().all(|s| s.is_finite()));
        prop_assert_eq!(rir.len(), 1024);
    }
}
