use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::Square;
use crate::heightfield::build_quadtree;
use crate::scenario::{FloodScenario, Sample};
use crate::synth::grid_scenario;

fn field_tree(side: f64, n: usize, depth: u8, sample: impl Fn(Vec2) -> Sample) -> HeightFieldQuadtree {
    let dem = TerrainDem::flat(Vec2::zeros(), side / 32.0, 32, 32, -10.0);
    let sc: Arc<FloodScenario> = Arc::new(grid_scenario(side, n, dem, sample));
    build_quadtree(&sc, 0, Square::new(Vec2::zeros(), side), depth).unwrap()
}

fn uniform_tree(v: Vec2) -> HeightFieldQuadtree {
    field_tree(256.0, 16, 4, |_| Sample::Wet { elevation: 1.0, velocity: v })
}

fn literal_eq1(p: &Vec3, lambda: f64, s: f64, v: Vec2, t: f64) -> Vec3 {
    let k = 2.0 * std::f64::consts::PI / lambda;
    let c = (9.81 / k).sqrt();
    let d = p.x * v.x + p.y * v.y;
    let arg = k * d - c * t;
    Vec3::new(p.x + v.x * (s / k) * arg.cos(), p.y + v.y * (s / k) * arg.cos(), p.z + (s / k) * arg.sin())
}

#[test]
fn zero_steepness_is_identity() {
    let w = WaveParams::new(10.0, 0.0, Vec2::x());
    let p = Vec3::new(3.0, -2.0, 1.5);
    assert_eq!(gerstner_displace(&p, &w, 4.2), p);
    assert_eq!(analytic_normal(&p, &w, 4.2), Vec3::z());
}

#[test]
fn quarter_phase_lifts_without_horizontal_motion() {
    let w = WaveParams::new(8.0, 0.3, Vec2::x());
    let p = Vec3::new(2.0, 5.0, 0.0);
    let off = gerstner_offset(&p, &w, 0.0);
    assert!((w.phase(p.xy(), 0.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    assert!(off.xy().norm() < 1e-15);
    assert!((off.z - w.amplitude()).abs() < 1e-15);
}

#[test]
fn displacement_matches_literal_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let p = Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-2.0..2.0));
        let a: f64 = rng.random_range(-3.2..3.2);
        let v = Vec2::new(a.cos(), a.sin());
        let (lambda, s, t) = (rng.random_range(1.0..50.0), rng.random_range(0.0..1.0), rng.random_range(0.0..100.0));
        let got = gerstner_displace(&p, &WaveParams::new(lambda, s, v), t);
        assert!((got - literal_eq1(&p, lambda, s, v, t)).norm() < 1e-12);
    }
}

#[test]
fn tiles_follow_the_two_lambda_lattice() {
    let t = tile_of(Vec2::zeros(), 10.0);
    assert_eq!((t.min, t.max), (Vec2::zeros(), Vec2::new(20.0, 20.0)));
    let t = tile_of(Vec2::new(-1.0, -1.0), 10.0);
    assert_eq!((t.min, t.max), (Vec2::new(-20.0, -20.0), Vec2::zeros()));
}

#[test]
fn overlap_tiles_enclose_the_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let lambda = rng.random_range(0.5..40.0);
        let p = Vec2::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4));
        let t = tile_of(p, lambda);
        assert!(p.x >= t.min.x && p.x < t.max.x && p.y >= t.min.y && p.y < t.max.y);
        let tiles = blend_tiles(p, lambda, BlendMode::Cosine);
        let centers: Vec<Vec2> = tiles.iter().map(|((i, j), _)| Vec2::new(*i as f64, *j as f64) * lambda).collect();
        let lo = centers.iter().fold(Vec2::repeat(f64::MAX), |a, c| a.inf(c));
        let hi = centers.iter().fold(Vec2::repeat(f64::MIN), |a, c| a.sup(c));
        assert!(((hi - lo) - Vec2::repeat(lambda)).norm() < 1e-9 * lambda.max(p.norm()));
        assert!(p.x >= lo.x - 1e-9 && p.x <= hi.x + 1e-9 && p.y >= lo.y - 1e-9 && p.y <= hi.y + 1e-9);
        assert!((t.center() - centers[0]).norm() < 1e-9 * p.norm().max(1.0));
        let total: f64 = tiles.iter().map(|t| t.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn tile_center_gives_no_weight_to_shifted_tiles() {
    let tiles = blend_tiles(Vec2::new(10.0, 30.0), 10.0, BlendMode::Cosine);
    assert_eq!(tiles[0].1, 1.0);
    assert!(tiles[1..].iter().all(|t| t.1 == 0.0));
}

#[test]
fn printed_blend_stays_near_zero() {
    let max = blend_weight(10.0, 10.0, BlendMode::Printed);
    assert!(max < 0.07);
    assert_eq!(blend_weight(10.0, 10.0, BlendMode::Cosine), 1.0);
}

#[test]
fn uniform_flow_blends_to_single_wave() {
    let v = Vec2::new(0.6, 0.8);
    let tree = uniform_tree(v * 2.0);
    let mut field = WaveField::new(&tree, WaveCascade::new(4.0, 0, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let p = Vec3::new(rng.random_range(1.0..255.0), rng.random_range(1.0..255.0), 1.0);
        let single = gerstner_offset(&p, &WaveParams::new(6.0, 0.2, v), 3.0);
        let blended = field.blended(&p, 6.0, 0.2, 3.0).unwrap().offset;
        assert!((single - blended).norm() < 1e-12);
    }
}

fn opposing_tree() -> HeightFieldQuadtree {
    field_tree(256.0, 64, 6, |p| {
        let vx = if p.x < 128.0 { 1.0 } else { -1.0 };
        Sample::Wet { elevation: 1.0, velocity: Vec2::new(vx, 0.0) }
    })
}

#[test]
fn opposing_flows_blend_continuously() {
    let tree = opposing_tree();
    let lambda = 8.0;
    let s = 0.2;
    let amp = s / (2.0 * std::f64::consts::PI / lambda);
    let mut field = WaveField::new(&tree, WaveCascade::new(lambda, 0, 1).with_steepness(s));
    let h = 1e-3;
    // deviation from the linear prediction over consecutive 1 mm steps
    let mut worst: f64 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    let mut x = 100.0;
    while x < 156.0 {
        let m = field.blended(&Vec3::new(x, 77.0, 0.0), lambda, s, 1.3).unwrap().offset.norm();
        if let Some((a, b)) = prev {
            worst = worst.max((m - (2.0 * b - a)).abs());
            prev = Some((b, m));
        } else {
            prev = Some((m, m));
        }
        x += h;
    }
    assert!(worst < 1e-6 * amp, "jump {worst:e} vs {:e}", 1e-6 * amp);
}

#[test]
fn cascade_of_zero_levels_is_base_wave() {
    let tree = uniform_tree(Vec2::x());
    let mut field = WaveField::new(&tree, WaveCascade::new(4.0, 0, 9));
    let p = Vec3::new(40.0, 41.0, 0.5);
    let direct = field.blended_wave(&p, 4.0, 2.0).unwrap();
    assert_eq!(field.superpose(&p, 2.0).unwrap(), direct);
}

#[test]
fn dry_leaves_mute_the_base_wave() {
    let tree = field_tree(256.0, 64, 6, |p| {
        if p.x < 128.0 {
            Sample::Wet { elevation: 1.0, velocity: Vec2::new(1.0, 0.2) }
        } else {
            Sample::Dry
        }
    });
    let cascade = WaveCascade::new(4.0, 2, 5);
    let mut field = WaveField::new(&tree, cascade.clone());
    let p = Vec3::new(130.5, 60.0, 0.0);
    assert!(field.is_dry(p.xy()).unwrap());
    let base = field.blended_wave(&p, 4.0, 1.0).unwrap();
    assert!(base.norm() > 0.0, "fixture should drive the base wave near the shore");
    let l = cascade.wavelengths();
    let expected = field.blended_wave(&p, l[1], 1.0).unwrap() + field.blended_wave(&p, l[2], 1.0).unwrap();
    assert!((field.superpose(&p, 1.0).unwrap() - expected).norm() < 1e-15);
}

#[test]
fn cascade_sums_levels() {
    let tree = opposing_tree();
    let cascade = WaveCascade::new(4.0, 3, 42);
    let mut field = WaveField::new(&tree, cascade.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let p = Vec3::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0), 0.0);
        let mut sum = Vec3::zeros();
        for l in cascade.wavelengths() {
            let mut single = WaveField::new(&tree, cascade.clone());
            sum += single.blended_wave(&p, l, 0.7).unwrap();
        }
        assert!((field.superpose(&p, 0.7).unwrap() - sum).norm() < 1e-12);
    }
}

#[test]
fn cascade_wavelengths_increase() {
    for seed in 0..50 {
        let c = WaveCascade::new(4.0, 6, seed);
        c.validate().unwrap();
        assert!(c.ratios.iter().all(|r| (0.8..=1.0).contains(r)));
        assert_eq!(c, WaveCascade::new(4.0, 6, seed));
    }
    assert!(WaveCascade::new(4.0, 4, 0).with_steepness(0.3).validate().is_err());
}

fn fd_normal(p: &Vec3, w: &WaveParams, t: f64, h: f64) -> Vec3 {
    let d = |dx: f64, dy: f64| gerstner_displace(&(p + Vec3::new(dx, dy, 0.0)), w, t);
    let tx = (d(h, 0.0) - d(-h, 0.0)) / (2.0 * h);
    let ty = (d(0.0, h) - d(0.0, -h)) / (2.0 * h);
    tx.cross(&ty).normalize()
}

#[test]
fn crest_normal_tilts_against_travel() {
    // just past the crest along +x the surface slopes down toward +x
    let w = WaveParams::new(10.0, 0.5, Vec2::x());
    let p = Vec3::new(10.0 / 4.0 + 0.3, 0.0, 0.0);
    let n = analytic_normal(&p, &w, 0.0);
    assert!(n.x > 0.0 && n.y.abs() < 1e-12);
    let fd = fd_normal(&p, &w, 0.0, 1e-3);
    assert!(n.angle(&fd).to_degrees() < 0.5);
}

#[test]
fn analytic_normals_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a: f64 = rng.random_range(-3.2..3.2);
        let w = WaveParams::new(rng.random_range(2.0..60.0), rng.random_range(0.0..0.9), Vec2::new(a.cos(), a.sin()));
        let p = Vec3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), 0.0);
        let t = rng.random_range(0.0..50.0);
        let n = analytic_normal(&p, &w, t);
        assert!((n.norm() - 1.0).abs() < 1e-12);
        worst = worst.max(n.angle(&fd_normal(&p, &w, t, 1e-3)).to_degrees());
    }
    assert!(worst < 0.5, "worst {worst}°");
}

#[test]
fn terrain_clamp_cases() {
    let dem = TerrainDem::flat(Vec2::zeros(), 1.0, 10, 10, -10.0);
    let p = Vec3::new(5.0, 5.0, 0.0);
    let d = Vec3::new(0.1, 0.0, 0.3);
    let deep = clamp_against_terrain(&p, d, 0.5, &dem).unwrap();
    assert_eq!((deep.displacement, deep.hidden, deep.clamped), (d, false, false));

    let shore = TerrainDem::flat(Vec2::zeros(), 1.0, 10, 10, -0.4);
    let graze = clamp_against_terrain(&p, d, 0.5, &shore).unwrap();
    assert!(graze.clamped && !graze.hidden);
    assert!((graze.displacement.normalize() - d.normalize()).norm() < 1e-12);
    assert!((0.5 * graze.displacement.norm() / d.norm() - MIN_AMPLITUDE).abs() < 1e-15);

    let land = TerrainDem::flat(Vec2::zeros(), 1.0, 10, 10, 0.5);
    assert!(clamp_against_terrain(&p, d, 0.5, &land).unwrap().hidden);
    assert!(clamp_against_terrain(&Vec3::new(50.0, 0.0, 0.0), d, 0.5, &land).is_err());
}

#[test]
fn blended_wave_outside_bounds_errors() {
    let tree = uniform_tree(Vec2::x());
    let mut field = WaveField::new(&tree, WaveCascade::default());
    assert!(matches!(field.blended_wave(&Vec3::new(-5.0, 0.0, 0.0), 4.0, 0.0), Err(WaveError::Field(_))));
}

proptest! {
    #[test]
    fn periodic_in_time(x in -200.0f64..200.0, y in -200.0f64..200.0, a in -3.1f64..3.1, lambda in 1.0f64..80.0, s in 0.0f64..1.0, t in 0.0f64..100.0) {
        let w = WaveParams::new(lambda, s, Vec2::new(a.cos(), a.sin()));
        let p = Vec3::new(x, y, 0.0);
        let d0 = gerstner_offset(&p, &w, t);
        let d1 = gerstner_offset(&p, &w, t + w.period());
        prop_assert!((d0 - d1).norm() < 1e-9);
    }

    #[test]
    fn bounded_excursion_and_zero_mean(x in -200.0f64..200.0, y in -200.0f64..200.0, a in -3.1f64..3.1, lambda in 1.0f64..80.0, s in 0.01f64..1.0) {
        let w = WaveParams::new(lambda, s, Vec2::new(a.cos(), a.sin()));
        let p = Vec3::new(x, y, 0.0);
        let amp = w.amplitude();
        let mut mean = 0.0;
        for i in 0..64 {
            let d = gerstner_offset(&p, &w, w.period() * i as f64 / 64.0);
            prop_assert!(d.xy().norm() <= amp * (1.0 + 1e-12));
            prop_assert!(d.z.abs() <= amp * (1.0 + 1e-12));
            mean += d.z / 64.0;
        }
        prop_assert!(mean.abs() < 1e-6 * amp);
    }

    #[test]
    fn blend_weights_partition(x in -1e4f64..1e4, y in -1e4f64..1e4, lambda in 0.1f64..100.0) {
        for mode in [BlendMode::Cosine, BlendMode::Printed] {
            let total: f64 = blend_tiles(Vec2::new(x, y), lambda, mode).iter().map(|t| t.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
