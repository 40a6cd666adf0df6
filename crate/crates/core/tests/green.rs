use std::sync::Arc;

use interlace_core::green::{
    equilibrium, gauge_solve, green_asymptotic, green_matrix, green_value, hitting_probability, GaugeVerdict,
    GreenTable,
};
use interlace_core::lattice::{LatticeField, Site, SiteSet};

const TOL: f64 = 1e-11;

/// Values from an independent high-precision Bessel-integral evaluation,
/// `g(x) = ∫_0^∞ e^{-t} Π_j I_{x_j}(t/3) dt`, at 30 digits.
const GOLDEN: [([i64; 3], f64); 11] = [
    ([0, 0, 0], 1.516_386_059_151_978),
    ([1, 0, 0], 0.516_386_059_151_978),
    ([1, 1, 0], 0.331_148_602_126_423_9),
    ([1, 1, 1], 0.261_470_126_386_353_15),
    ([2, 0, 0], 0.257_335_887_254_194_5),
    ([2, 1, 0], 0.215_589_620_840_940_53),
    ([3, 2, 1], 0.126_945_971_807_376_76),
    ([5, 0, 0], 0.096_606_452_003_638_97),
    ([10, 0, 0], 0.047_869_569_251_576_43),
    ([7, 4, 2], 0.057_457_625_983_475_7),
    ([20, 5, 3], 0.022_927_414_440_314_347),
];

/// Watson's closed form for the return Green value on Z^3.
const WATSON: f64 = 1.516_386_059_151_978;

fn set(sites: &[[i64; 3]]) -> Arc<SiteSet> {
    Arc::new(SiteSet::new(3, sites.iter().map(|s| Site(s.to_vec()))).unwrap())
}

#[test]
fn green_matches_bessel_oracle() {
    for (x, want) in GOLDEN {
        let got = green_value(&Site(x.to_vec()), TOL).unwrap();
        assert!((got - want).abs() < 1e-10, "g{x:?} = {got}, oracle {want}");
    }
    assert!((GOLDEN[0].1 - WATSON).abs() < 1e-15);
}

#[test]
fn green_symmetric_under_reflection_and_permutation() {
    let a = green_value(&Site(vec![3, -1, 2]), TOL).unwrap();
    let b = green_value(&Site(vec![-3, 1, -2]), TOL).unwrap();
    let c = green_value(&Site(vec![2, 3, 1]), TOL).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(a.to_bits(), c.to_bits());
}

#[test]
fn table_agrees_with_pointwise_values() {
    let table = GreenTable::compute(3, 6, TOL).unwrap();
    for x in [[0, 0, 0], [6, 6, 6], [1, -5, 2], [0, 3, 6]] {
        let single = green_value(&Site(x.to_vec()), TOL).unwrap();
        assert_eq!(table.get(&x).unwrap().to_bits(), single.to_bits());
    }
}

#[test]
fn one_step_identity() {
    let g0 = green_value(&Site(vec![0, 0, 0]), TOL).unwrap();
    let g1 = green_value(&Site(vec![0, 1, 0]), TOL).unwrap();
    assert!((g1 - (g0 - 1.0)).abs() < 1e-10);
}

#[test]
fn far_field_matches_asymptotic_expansion() {
    for x in [[20, 5, 3], [10, 0, 0]] {
        let g = green_value(&Site(x.to_vec()), TOL).unwrap();
        let r: f64 = x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((g - green_asymptotic(&x)).abs() < 2e-5, "{x:?}");
        // Leading continuum term within 10% at |x| ≈ 20.
        let lead = 3.0 / (2.0 * std::f64::consts::PI * r);
        assert!((g / lead - 1.0).abs() < 0.1);
    }
}

#[test]
fn green_matrix_examples() {
    let m = green_matrix(set(&[[0, 0, 0]]), TOL).unwrap();
    assert!((m.entries()[(0, 0)] - WATSON).abs() < 1e-10);

    let m = green_matrix(set(&[[0, 0, 0], [1, 0, 0]]), TOL).unwrap();
    assert!((m.entries()[(0, 1)] - 0.516_386_059_151_978).abs() < 1e-10);
    assert_eq!(m.entries()[(0, 1)], m.entries()[(1, 0)]);

    let line: Vec<[i64; 3]> = (0..8).map(|i| [i, 0, 0]).collect();
    let m = green_matrix(set(&line), TOL).unwrap();
    for j in 1..8 {
        assert!(m.entries()[(0, j)] < m.entries()[(0, j - 1)]);
        assert!(m.entries()[(0, j)] > 0.0);
    }
}

#[test]
fn capacity_of_a_point() {
    let eq = equilibrium(set(&[[0, 0, 0]]), TOL).unwrap();
    assert!((eq.capacity() - 1.0 / WATSON).abs() < 1e-10);
}

fn block(lo: i64, hi: i64) -> Arc<SiteSet> {
    let mut v = Vec::new();
    for a in lo..=hi {
        for b in lo..=hi {
            for c in lo..=hi {
                v.push([a, b, c]);
            }
        }
    }
    set(&v)
}

#[test]
fn equilibrium_potential_is_one_on_the_set() {
    let k = block(0, 3);
    let eq = equilibrium(k.clone(), TOL).unwrap();
    assert!(eq.measure().iter().all(|&e| e >= 0.0));
    assert!((eq.measure().iter().sum::<f64>() - eq.capacity()).abs() < 1e-12);
    for x in k.iter() {
        assert!((eq.potential(x).unwrap() - 1.0).abs() < 1e-9, "{x:?}");
    }
}

#[test]
fn capacity_monotone_in_inclusion() {
    let mut last = 0.0;
    for hi in 0..4 {
        let c = equilibrium(block(0, hi), TOL).unwrap().capacity();
        assert!(c > last);
        last = c;
    }
}

#[test]
fn hitting_examples() {
    let eq = equilibrium(set(&[[0, 0, 0]]), TOL).unwrap();
    let h = hitting_probability(&Site(vec![1, 0, 0]), &eq).unwrap();
    assert!((h.probability - (1.0 - 1.0 / WATSON)).abs() < 1e-10);
    assert!((h.entry[0] - 1.0).abs() < 1e-12);

    let inside = hitting_probability(&Site(vec![0, 0, 0]), &eq).unwrap();
    assert_eq!(inside.probability, 1.0);

    let k = block(0, 2);
    let eq = equilibrium(k.clone(), TOL).unwrap();
    let mut last = 1.0;
    for step in 3..12 {
        let h = hitting_probability(&Site(vec![step, 1, 1]), &eq).unwrap();
        assert!(h.probability < last);
        last = h.probability;
        assert!((h.entry.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(h.entry.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn entry_law_is_harmonic_off_the_set() {
    // The unnormalised entrance law y ↦ P_y[X_{H_K} = x] is harmonic off K
    // and equals the indicator on K.
    let k = block(0, 2);
    let eq = equilibrium(k.clone(), TOL).unwrap();
    let law = |y: [i64; 3]| {
        let h = hitting_probability(&Site(y.to_vec()), &eq).unwrap();
        h.entry.iter().map(|e| e * h.probability).collect::<Vec<f64>>()
    };
    for y in [[3, 1, 1], [3, 3, 0], [-2, 1, 4]] {
        let centre = law(y);
        let mut mean = vec![0.0; k.len()];
        for axis in 0..3 {
            for s in [-1, 1] {
                let mut z = y;
                z[axis] += s;
                for (m, v) in mean.iter_mut().zip(law(z)) {
                    *m += v / 6.0;
                }
            }
        }
        for (a, b) in centre.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let h = hitting_probability(&Site(vec![3, 1, 1]), &eq).unwrap();
    assert_eq!(h.entry[k.position(&[1, 1, 1]).unwrap()], 0.0);
}

fn point_potential(lambda: f64) -> LatticeField {
    LatticeField::new(set(&[[0, 0, 0]]), vec![lambda]).unwrap()
}

#[test]
fn gauge_zero_potential() {
    let v = LatticeField::constant(set(&[[0, 0, 0]]), 0.0).unwrap();
    let r = gauge_solve(&v, 4).unwrap();
    assert_eq!(r.lambda_value, 0.0);
    assert!(r.gamma.unwrap().values().iter().all(|&g| g == 1.0));
}

#[test]
fn gauge_one_point_closed_form() {
    let lambda = 0.5;
    let r = gauge_solve(&point_potential(lambda), 8).unwrap();
    let want = lambda / (1.0 - lambda * WATSON);
    assert!(r.subcritical());
    assert!((r.lambda_value - want).abs() < 1e-9);
    assert!(r.residual < 1e-12);
    assert!(r.truncated[0].positive_definite && r.truncated[1].positive_definite);
    // Truncated values approach from below and improve with radius.
    let t1 = r.truncated[0].lambda_value.unwrap();
    let t2 = r.truncated[1].lambda_value.unwrap();
    assert!(t1 < t2 && t2 < r.lambda_value);
}

#[test]
fn gauge_blow_up_past_critical() {
    let r = gauge_solve(&point_potential(1.1 / WATSON), 8).unwrap();
    assert_eq!(r.verdict, GaugeVerdict::Supercritical { at_r: true, at_2r: true });
    assert!(r.lambda_value.is_infinite());
}

#[test]
fn gauge_nonpositive_potential() {
    let k = block(0, 1);
    let v = LatticeField::from_fn(k, |x| if x[0] == 0 { -0.3 } else { 0.0 }).unwrap();
    let r = gauge_solve(&v, 6).unwrap();
    assert!(r.lambda_value <= 0.0);
    let g = r.gamma.unwrap();
    for x in [[0, 0, 0], [0, 1, 1]] {
        let val = g.at(&x);
        assert!((0.0..=1.0).contains(&val));
    }
}

#[test]
fn gauge_series_for_small_potential() {
    let k = block(0, 1);
    let v = LatticeField::from_fn(k.clone(), |x| 0.02 * (1 + x[0] + 2 * x[1]) as f64).unwrap();
    let r = gauge_solve(&v, 6).unwrap();
    let g = green_matrix(k.clone(), TOL).unwrap();
    let w: Vec<f64> = v.values().to_vec();
    // Σ_k ⟨V, (GV)^k 1⟩
    let mut term = vec![1.0; w.len()];
    let mut total = 0.0;
    for _ in 0..200 {
        let t: f64 = w.iter().zip(&term).map(|(a, b)| a * b).sum();
        total += t;
        if t.abs() < 1e-17 {
            break;
        }
        let wt: Vec<f64> = w.iter().zip(&term).map(|(a, b)| a * b).collect();
        term = (0..w.len()).map(|i| (0..w.len()).map(|j| g.entries()[(i, j)] * wt[j]).sum()).collect();
    }
    assert!((r.lambda_value - total).abs() < 1e-10);
}

#[test]
fn gauge_monotone_in_potential() {
    let k = block(0, 1);
    let lo = LatticeField::from_fn(k.clone(), |x| 0.01 * x[0] as f64).unwrap();
    let hi = LatticeField::from_fn(k, |x| 0.01 * x[0] as f64 + 0.005).unwrap();
    assert!(gauge_solve(&lo, 6).unwrap().lambda_value <= gauge_solve(&hi, 6).unwrap().lambda_value);
}

#[test]
fn gauge_identity_holds_off_support() {
    let k = block(0, 1);
    let v = LatticeField::constant(k.clone(), 0.05).unwrap();
    let r = gauge_solve(&v, 6).unwrap();
    let g = r.gamma.as_ref().unwrap();
    // γ(y) - 1 = Σ_x g(y,x) V(x) γ(x) recomputed at a few sites of the inner half-ball.
    for y in [[3, 0, 0], [-1, -1, 2], [0, 0, 0]] {
        let mut s = 1.0;
        for x in k.iter() {
            let off: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            s += green_value(&Site(off), TOL).unwrap() * 0.05 * g.at(x);
        }
        assert!((g.at(&y) - s).abs() < 1e-7);
    }
}
