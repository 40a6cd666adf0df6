use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use interlace_core::deviation::{
    disconnection_frequency, disconnects, entropy_gap, insulation_bounds, mollify, relative_entropy_tilted,
    subadditivity_scan, DisconnectionSetup, GridField, Mollifier, ProfileEvent, SamplingMeasure, TestFunction,
};
use interlace_core::error::Error;
use interlace_core::geometry::Region;
use interlace_core::lattice::{build_window, ClosedBox};
use interlace_core::sim::{AtomicMeasure, WindowSampler};
use interlace_core::variational::SolveOptions;
use proptest::prelude::*;

fn cube(lo: f64, hi: f64) -> ClosedBox {
    ClosedBox::cube(3, lo, hi).unwrap()
}

fn ball(r: f64) -> Region {
    Region::ball(vec![0.0; 3], r)
}

fn measure_on(bx: &ClosedBox, n: u32, mass: impl Fn(&[i64]) -> f64) -> AtomicMeasure {
    let sites = Arc::new(build_window(bx, n).unwrap());
    let masses = sites.iter().map(&mass).collect();
    AtomicMeasure { scale: n, dim: 3, sites, masses }
}

#[test]
fn mollifier_is_a_probability_density() {
    for (dim, delta) in [(3usize, 0.25), (3, 1.7), (4, 0.5), (2, 0.3)] {
        let m = Mollifier::new(dim, delta).unwrap();
        let rule = GaussLegendre::new(NonZeroUsize::new(8).unwrap());
        let sphere = match dim {
            2 => 2.0 * std::f64::consts::PI,
            3 => 4.0 * std::f64::consts::PI,
            _ => 2.0 * std::f64::consts::PI.powi(2),
        };
        let total: f64 = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| {
                let r = 0.5 * delta * (x + 1.0);
                0.5 * delta * w * sphere * r.powi(dim as i32 - 1) * m.radial(r)
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "d = {dim}: {total}");
        assert_eq!(m.at(&vec![delta; dim]), 0.0);
    }
    assert!(Mollifier::new(3, 0.0).is_err());
}

#[test]
fn mollify_zero_linear_and_uniform() {
    let b = cube(-1.0, 1.0);
    let grid = GridField::over(&cube(-0.5, 0.5), 0.0625).unwrap();
    let m = Mollifier::new(3, 0.25).unwrap();
    let zero = mollify(&measure_on(&b, 4, |_| 0.0), &m, &grid).unwrap();
    assert!(zero.values().iter().all(|&v| v == 0.0));

    let m1 = measure_on(&b, 4, |x| (x[0] + 5) as f64);
    let m2 = measure_on(&b, 4, |x| (x[1] * x[2]) as f64 * 0.1);
    let sum = mollify(&m1.add(&m2).unwrap(), &m, &grid).unwrap();
    let parts = (mollify(&m1, &m, &grid).unwrap(), mollify(&m2, &m, &grid).unwrap());
    for ((s, a), b) in sum.values().iter().zip(parts.0.values()).zip(parts.1.values()) {
        assert!((s - a - b).abs() <= 1e-12 * (1.0 + s.abs()));
    }

    // u N^{-d} per site approximates u m_B; the mollified field is ≈ u on B_0.
    let n = 16u32;
    let u = 2.5;
    let flat = mollify(&measure_on(&b, n, |_| u / (n as f64).powi(3)), &m, &grid).unwrap();
    for &v in flat.values() {
        assert!((v / u - 1.0).abs() < 0.02, "{v}");
    }
}

/// Reachability by union-find over open nodes, independent of the BFS.
fn union_find_disconnects(field: &GridField, a: f64, k: &Region) -> bool {
    let counts = field.counts().to_vec();
    let n = field.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let open = |i: usize| field.values()[i] < a;
    let multi = |mut i: usize| {
        let mut m = vec![0; counts.len()];
        for j in (0..counts.len()).rev() {
            m[j] = i % counts[j];
            i /= counts[j];
        }
        m
    };
    let mut stride = vec![1usize; counts.len()];
    for j in (0..counts.len() - 1).rev() {
        stride[j] = stride[j + 1] * counts[j + 1];
    }
    for i in 0..n {
        if !open(i) {
            continue;
        }
        let m = multi(i);
        for j in 0..counts.len() {
            if m[j] + 1 < counts[j] && open(i + stride[j]) {
                let (ra, rb) = (root(&mut parent, i), root(&mut parent, i + stride[j]));
                parent[ra] = rb;
            }
        }
    }
    let mut boundary_roots = std::collections::HashSet::new();
    for i in 0..n {
        let m = multi(i);
        if open(i) && m.iter().zip(&counts).any(|(&x, &c)| x == 0 || x + 1 == c) {
            boundary_roots.insert(root(&mut parent, i));
        }
    }
    !(0..n).any(|i| open(i) && k.contains(&field.node(i)) && boundary_roots.contains(&root(&mut parent, i)))
}

#[test]
fn disconnection_of_constant_and_shell_fields() {
    let grid = GridField::over(&cube(-1.0, 1.0), 0.125).unwrap();
    let k = ball(0.3);
    let a = 2.0;
    assert!(disconnects(&grid.from_fn(|_| a + 1.0), a, &k, false).unwrap());
    assert!(!disconnects(&grid.from_fn(|_| a - 1.0), a, &k, false).unwrap());
    let shell = grid.from_fn(|z| {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (0.5..=0.7).contains(&r) {
            a + 1.0
        } else {
            a - 1.0
        }
    });
    assert!(disconnects(&shell, a, &k, false).unwrap());
    assert!(union_find_disconnects(&shell, a, &k));
    // Flipped comparison: the super-level set {f > a} is the shell only.
    assert!(disconnects(&shell.from_fn(|_| a - 1.0), a, &k, true).unwrap());

    // A hole in the shell along the x axis opens a path.
    let holed = grid.from_fn(|z| {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let hole = z[1].abs() < 0.1 && z[2].abs() < 0.1 && z[0] > 0.0;
        if (0.5..=0.7).contains(&r) && !hole {
            a + 1.0
        } else {
            a - 1.0
        }
    });
    assert!(!disconnects(&holed, a, &k, false).unwrap());
    assert!(!union_find_disconnects(&holed, a, &k));
}

#[test]
fn unresolved_geometry_is_an_error() {
    let grid = GridField::over(&cube(-1.0, 1.0), 0.25).unwrap();
    let f = grid.from_fn(|_| 0.0);
    assert!(matches!(disconnects(&f, 1.0, &ball(0.8), false), Err(Error::UnresolvedGeometry(_))));
    let tiny = Region::ball(vec![0.1, 0.1, 0.1], 0.01);
    assert!(matches!(disconnects(&f, 1.0, &tiny, false), Err(Error::UnresolvedGeometry(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bfs_agrees_with_union_find_and_is_monotone(
        values in prop::collection::vec(0.0f64..2.0, 9 * 9 * 9),
        bump in prop::collection::vec(0.0f64..0.5, 9 * 9 * 9),
    ) {
        let grid = GridField::over(&cube(-1.0, 1.0), 0.25).unwrap();
        let mut f = grid.clone();
        f.values_mut().copy_from_slice(&values);
        let k = ball(0.3);
        let d = disconnects(&f, 1.0, &k, false).unwrap();
        prop_assert_eq!(d, union_find_disconnects(&f, 1.0, &k));
        let mut raised = f.clone();
        for (v, b) in raised.values_mut().iter_mut().zip(&bump) {
            *v += b;
        }
        if d {
            prop_assert!(disconnects(&raised, 1.0, &k, false).unwrap());
        }
    }
}

#[test]
fn uniform_limit_of_disconnecting_fields_disconnects() {
    let grid = GridField::over(&cube(-1.0, 1.0), 0.125).unwrap();
    let k = ball(0.3);
    let shell = |z: &[f64]| {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (0.5..=0.7).contains(&r) {
            1.0
        } else {
            0.0
        }
    };
    for j in 1..6 {
        let eps = 0.5f64.powi(j);
        assert!(disconnects(&grid.from_fn(|z| shell(z) + eps), 1.0, &k, false).unwrap());
    }
    assert!(disconnects(&grid.from_fn(shell), 1.0, &k, false).unwrap());
}

#[test]
fn verdict_does_not_depend_on_ambient_box() {
    let b = cube(-1.0, 1.0);
    let big = cube(-1.5, 1.5);
    let n = 6u32;
    let mass = |x: &[i64]| {
        let r2: i64 = x.iter().map(|c| c * c).sum();
        if (9..=16).contains(&r2) {
            0.05
        } else {
            0.001 * ((x[0] + 2 * x[1] + 3 * x[2]).rem_euclid(5)) as f64
        }
    };
    let small_mu = measure_on(&b, n, mass);
    let big_mu = measure_on(&big, n, |x| {
        if b.contains(&x.iter().map(|&c| c as f64 / 6.0).collect::<Vec<_>>()) {
            mass(x)
        } else {
            0.0
        }
    });
    let m = Mollifier::new(3, 0.25).unwrap();
    let grid = GridField::over(&cube(-0.7, 0.7), 0.0625).unwrap();
    let k = ball(0.2);
    for a in [0.5, 2.0, 5.0, 20.0] {
        let x = disconnects(&mollify(&small_mu, &m, &grid).unwrap(), a, &k, false).unwrap();
        let y = disconnects(&mollify(&big_mu, &m, &grid).unwrap(), a, &k, false).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn entropy_gap_examples() {
    assert_eq!(entropy_gap(1.3, 1.3).unwrap(), (0.0, 0.0));
    let (e, l) = entropy_gap(4.0, 1.0).unwrap();
    assert!((e - (4.0 * 4f64.ln() - 3.0)).abs() < 1e-12 && (l - 1.0).abs() < 1e-15);
    assert!((e - 2.545_177_444_479_562).abs() < 1e-12);
    for i in 0..=200 {
        let r = 10f64.powf(-2.0 + 4.0 * i as f64 / 200.0);
        if (r - 1.0).abs() > 1e-12 {
            let (e, l) = entropy_gap(r * 0.7, 0.7).unwrap();
            assert!(e > l, "v/u = {r}: {e} <= {l}");
        }
    }
    assert!(entropy_gap(0.0, 1.0).is_err());
}

#[test]
fn tilted_relative_entropy() {
    assert_eq!(relative_entropy_tilted(0.6, 0.4, 1.0, 5.0).unwrap(), 0.0);
    let one = relative_entropy_tilted(2.0, 0.5, 1.0, 1.0).unwrap();
    assert!((relative_entropy_tilted(2.0, 0.5, 1.0, 3.5).unwrap() - 3.5 * one).abs() < 1e-12);
    assert!((one - (2.5 * 2.5f64.ln() - 1.5)).abs() < 1e-12);
    assert!(relative_entropy_tilted(0.5, 0.1, 1.0, 1.0).is_err());
}

fn unit_ball_setup(a: f64, u: f64, delta: f64) -> DisconnectionSetup {
    DisconnectionSetup { k: ball(1.0), b0: cube(-2.0, 2.0), b: cube(-3.0, 3.0), delta, a, u }
}

#[test]
fn insulation_rates() {
    let o = SolveOptions::default();
    let r = insulation_bounds(&unit_ball_setup(4.0, 1.0, 0.2), 10, &o).unwrap();
    let expect = 2.0 * std::f64::consts::PI / 3.0;
    assert!((r.upper_rate / expect - 1.0).abs() < 0.05, "{}", r.upper_rate);
    assert!(r.lower_rate >= r.upper_rate);

    let near = insulation_bounds(&unit_ball_setup(1.0 + 1e-6, 1.0, 0.2), 6, &o).unwrap();
    assert!(near.upper_rate < 1e-12 && near.lower_rate < 1e-12);
    assert!(insulation_bounds(&unit_ball_setup(1.0, 1.0, 0.2), 6, &o).is_err());

    // δ ↓ 0 brings the lower rate down toward the upper one.
    let lows: Vec<f64> = [0.4, 0.2, 0.1]
        .iter()
        .map(|&d| insulation_bounds(&unit_ball_setup(4.0, 1.0, d), 6, &o).unwrap().lower_rate)
        .collect();
    let upper = insulation_bounds(&unit_ball_setup(4.0, 1.0, 0.1), 6, &o).unwrap().upper_rate;
    assert!(lows[0] > lows[1] && lows[1] > lows[2] && lows[2] >= upper, "{lows:?} {upper}");

    // Rates double with (√a − √u)².
    let base = insulation_bounds(&unit_ball_setup(4.0, 1.0, 0.2), 6, &o).unwrap();
    let a2 = (1.0 + 2f64.sqrt()).powi(2);
    let doubled = insulation_bounds(&unit_ball_setup(a2, 1.0, 0.2), 6, &o).unwrap();
    assert!((doubled.upper_rate / base.upper_rate - 2.0).abs() < 1e-12);
}

fn small_setup(a: f64, u: f64) -> DisconnectionSetup {
    DisconnectionSetup { k: ball(0.25), b0: cube(-0.75, 0.75), b: cube(-1.05, 1.05), delta: 0.25, a, u }
}

#[test]
fn disconnection_frequency_extremes() {
    let zero = disconnection_frequency(&small_setup(0.0, 1.0), 4, SamplingMeasure::Plain, 20, 3, 0, 1e-11).unwrap();
    assert_eq!(zero.frequency.hits, 20);
    let rare = disconnection_frequency(&small_setup(50.0, 0.5), 4, SamplingMeasure::Plain, 40, 3, 0, 1e-11).unwrap();
    assert_eq!(rare.frequency.hits, 0);
    assert!(rare.frequency.upper > 0.0 && rare.frequency.upper < 0.1);
    let bad = DisconnectionSetup { b: cube(-0.8, 0.8), ..small_setup(1.0, 1.0) };
    assert!(bad.validate().is_err());
}

#[test]
fn subadditivity_scan_behaviour() {
    let bx = cube(0.0, 1.0);
    let sampler = WindowSampler::new(Arc::new(build_window(&bx, 2).unwrap()), 1e-11).unwrap();
    let all = ProfileEvent { tests: vec![TestFunction::One], delta: f64::INFINITY };
    let t = subadditivity_scan(&sampler, &bx, &all, 2, &[1.0, 2.0], 200, 1, 0).unwrap();
    assert!(t.rows.iter().all(|r| r.f_hat == Some(0.0)));

    let ev = ProfileEvent { tests: vec![TestFunction::One, TestFunction::Coordinate { axis: 2 }], delta: 0.4 };
    let t = subadditivity_scan(&sampler, &bx, &ev, 2, &[1.0, 2.0, 4.0], 4000, 2, 0).unwrap();
    assert_eq!(t.pairs.len(), 2);
    assert!(t.pairs.iter().all(|p| p.holds_within_ci), "{:?}", t.pairs);
    let f1 = t.rows[0].f_hat.unwrap();
    let f2 = t.rows[1].f_hat.unwrap();
    assert!(f2 <= 2.0 * f1 + (t.rows[1].f_upper - t.rows[1].f_lower));

    let bad = ProfileEvent { tests: vec![TestFunction::Coordinate { axis: 0 }], delta: 0.4 };
    assert!(subadditivity_scan(&sampler, &bx, &bad, 2, &[1.0], 10, 1, 0).is_err());
    let wrong_scale = subadditivity_scan(&sampler, &bx, &ev, 3, &[1.0], 10, 1, 0);
    assert!(wrong_scale.is_err());
}
