use cf3d_autodiff::RngState;
use cf3d_radio::*;

fn flat(w: usize, h: usize, bs: (f64, f64)) -> (Vec<u8>, Vec<f32>, BsConfig) {
    (vec![0; w * h], vec![0.0; w * h], BsConfig::at(bs.0, bs.1))
}

fn block(e_h: &mut [u8], e_v: &mut [f32], w: usize, x: (usize, usize), y: (usize, usize), height: f32) {
    for r in y.0..y.1 {
        for c in x.0..x.1 {
            e_h[r * w + c] = 1;
            e_v[r * w + c] = height;
        }
    }
}

fn wavelength() -> f64 {
    BsConfig::at(0.0, 0.0).wavelength()
}

#[test]
fn zero_density_gives_an_empty_scene() {
    let scn = generate_scenario(&SceneConfig::new(1, 64, 0.0)).unwrap();
    assert!(scn.e_h.iter().all(|&v| v == 0));
    assert!(scn.e_v.iter().all(|&v| v == 0.0));
    assert!(scn.buildings().is_empty());
}

#[test]
fn generation_is_deterministic_and_hits_density() {
    let cfg = SceneConfig::new(7, 128, 0.3);
    let a = generate_scenario(&cfg).unwrap();
    let b = generate_scenario(&cfg).unwrap();
    assert_eq!(a.e_h, b.e_h);
    assert_eq!(a.e_v, b.e_v);
    assert_eq!(a.bs, b.bs);
    assert!((a.footprint_fraction() - 0.3).abs() <= 0.05, "{}", a.footprint_fraction());
    assert!(!a.inside_building(a.bs.position()));
    for (&f, &h) in a.e_h.iter().zip(&a.e_v) {
        assert_eq!(f == 1, h > 0.0);
        assert!((10.0..=50.0).contains(&h) || h == 0.0);
    }
}

#[test]
fn impossible_density_reports_generation_failure() {
    let mut cfg = SceneConfig::new(2, 32, 0.95);
    cfg.max_attempts = 2_000;
    assert!(matches!(generate_scenario(&cfg), Err(RadioError::Generation { .. })));
    assert!(matches!(generate_scenario(&SceneConfig::new(2, 16, 0.1)), Err(RadioError::Config(_))));
}

#[test]
fn from_maps_rejects_broken_invariants() {
    let (e_h, mut e_v, bs) = flat(32, 32, (5.5, 5.5));
    e_v[40] = 12.0;
    assert!(matches!(
        Scenario::from_maps(32, 32, e_h, e_v, bs, 0),
        Err(RadioError::Format(_))
    ));
    let (e_h, e_v, bs) = flat(32, 32, (5.5, 5.5));
    assert!(Scenario::from_maps(32, 31, e_h, e_v, bs, 0).is_err());
}

#[test]
fn line_of_sight_examples() {
    let (e_h, e_v, bs) = flat(64, 64, (32.5, 32.5));
    let empty = Scenario::from_maps(64, 64, e_h, e_v, bs, 0).unwrap();
    assert!(!los_blocked(&empty, bs.position(), [10.0, 10.0, 50.0]));
    assert!(!los_blocked(&empty, bs.position(), [32.5, 32.5, 60.0]));

    let (mut e_h, mut e_v, bs) = flat(64, 64, (10.5, 32.5));
    block(&mut e_h, &mut e_v, 64, (28, 32), (20, 44), 20.0);
    let wall = Scenario::from_maps(64, 64, e_h, e_v, bs, 0).unwrap();
    assert!(los_blocked(&wall, bs.position(), [50.5, 32.5, 10.0]));
    // high enough to clear the 20 m wall
    assert!(!los_blocked(&wall, bs.position(), [50.5, 32.5, 80.0]));
}

#[test]
fn blocking_is_monotone_in_building_height() {
    let lav = [50.5, 30.0, 35.0];
    let mut was_blocked = false;
    for height in [5.0f32, 15.0, 25.0, 30.0, 35.0, 45.0, 60.0] {
        let (mut e_h, mut e_v, bs) = flat(64, 64, (10.5, 32.5));
        block(&mut e_h, &mut e_v, 64, (28, 32), (20, 44), height);
        let scn = Scenario::from_maps(64, 64, e_h, e_v, bs, 0).unwrap();
        let blocked = los_blocked(&scn, bs.position(), lav);
        assert!(blocked || !was_blocked, "unblocked again at {height} m");
        was_blocked = blocked;
    }
    assert!(was_blocked);
}

#[test]
fn empty_scene_traces_exactly_one_free_space_path() {
    let (e_h, e_v, bs) = flat(64, 64, (32.5, 32.5));
    let scn = Scenario::from_maps(64, 64, e_h, e_v, bs, 0).unwrap();
    let cfg = TraceConfig {
        max_paths: 5,
        gamma: 0.6,
        wavelength: wavelength(),
    };
    let lav = [12.5, 40.5, 40.0];
    let paths = trace_paths(&scn, lav, &cfg, &mut RngState::new(3));
    assert_eq!(paths.len(), 1);
    let los = paths.los.unwrap();
    let d = ((20.0f64).powi(2) + 8.0f64.powi(2) + 15.0f64.powi(2)).sqrt();
    assert!((los.length - d).abs() < 1e-12);
    assert!((los.amplitude - wavelength() / (4.0 * std::f64::consts::PI * d)).abs() < 1e-15);
    assert_eq!(los.bounces, 0);
}

#[test]
fn facade_reflection_goes_around_a_wall() {
    let (mut e_h, mut e_v, bs) = flat(64, 64, (10.5, 32.5));
    block(&mut e_h, &mut e_v, 64, (28, 32), (20, 44), 60.0);
    block(&mut e_h, &mut e_v, 64, (0, 64), (50, 54), 80.0);
    let scn = Scenario::from_maps(64, 64, e_h, e_v, bs, 0).unwrap();
    let cfg = TraceConfig {
        max_paths: 5,
        gamma: 0.6,
        wavelength: wavelength(),
    };
    let lav = [50.5, 32.5, 25.0];
    let paths = trace_paths(&scn, lav, &cfg, &mut RngState::new(0));
    assert!(paths.los.is_none());
    assert!(!paths.nlos.is_empty());
    // mirror image of the base station across the facade plane y = 50
    let image_len = (40.0f64.powi(2) + 35.0f64.powi(2)).sqrt();
    let hit = paths.nlos.iter().find(|p| (p.length - image_len).abs() < 1e-4).expect("facade path");
    assert_eq!(hit.bounces, 1);
    let expect = 0.6 * wavelength() / (4.0 * std::f64::consts::PI * hit.length);
    assert!((hit.amplitude - expect).abs() < 1e-15);
}

#[test]
fn path_count_never_exceeds_the_budget() {
    let scn = generate_scenario(&SceneConfig::new(7, 128, 0.3)).unwrap();
    let cfg = TraceConfig {
        max_paths: 5,
        gamma: 0.6,
        wavelength: wavelength(),
    };
    let mut rng = RngState::new(11);
    let positions = dataset::sample_aerial_positions(&scn, 200, &mut rng);
    for p in positions {
        let paths = trace_paths(&scn, p, &cfg, &mut rng);
        assert!(paths.len() <= 5);
        let amps: Vec<f64> = paths.nlos.iter().map(|p| p.amplitude).collect();
        assert!(amps.windows(2).all(|w| w[0] >= w[1]));
    }
}
