use proptest::prelude::*;
use wander_core::discrete::{
    check_measure_preservation, estimate_transition_measure_discrete, forward_orbit,
    DiscreteOptions, DiscreteSystem, Domain, Piece, SurfaceSpec,
};

fn translation(surfaces: SurfaceSpec) -> DiscreteSystem {
    DiscreteSystem::new(
        Domain::HalfLine,
        vec![Piece::new(0.0, f64::INFINITY, 1.0, 1.0)],
        surfaces,
    )
    .unwrap()
}

#[test]
fn shrinking_intervals_leave_a_null_set() {
    let sys = translation(SurfaceSpec::Translates {
        shift: 1.0,
        offset: 0.0,
        width: 1.0,
        ratio: 0.5,
    });
    let opts = DiscreteOptions::default();
    let rep = estimate_transition_measure_discrete(&sys, 1, 20, &opts).unwrap();
    let est = rep.final_estimate().value;
    assert!(est <= 2f64.powi(-20) + 2.0 * rep.resolution, "{est}");
    for row in &rep.rows {
        assert_eq!(row.censored, 0.0);
        // Trans at depth d is frac(x) < 2^-d
        let want = 2f64.powi(-(row.depth as i32));
        assert!((row.estimate.value - want).abs() <= rep.resolution);
    }
}

#[test]
fn constant_width_keeps_half() {
    let sys = translation(SurfaceSpec::Translates {
        shift: 1.0,
        offset: 0.0,
        width: 0.5,
        ratio: 1.0,
    });
    let rep = estimate_transition_measure_discrete(&sys, 1, 20, &DiscreteOptions::default()).unwrap();
    assert!((rep.final_estimate().value - 0.5).abs() <= 0.01);
}

#[test]
fn empty_family_gives_zero() {
    let sys = translation(SurfaceSpec::Empty);
    let rep = estimate_transition_measure_discrete(
        &sys,
        1,
        5,
        &DiscreteOptions {
            grid: 1000,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(rep.final_estimate().value, 0.0);
}

#[test]
fn rotation_orbits_are_periodic_not_censored() {
    let sys = DiscreteSystem::new(
        Domain::Circle,
        vec![Piece::new(0.0, 1.0, 1.0, 0.25)],
        SurfaceSpec::Explicit {
            sets: vec![vec![(0.0, 0.1)], vec![(0.5, 0.55)]],
        },
    )
    .unwrap();
    let rep = estimate_transition_measure_discrete(
        &sys,
        1,
        2,
        &DiscreteOptions {
            grid: 4000,
            ..Default::default()
        },
    )
    .unwrap();
    // x meets [0, .1) iff x mod 1/4 < .1; and [.5, .55) iff x mod 1/4 < .05
    assert!((rep.final_estimate().value - 0.2).abs() <= 1e-3);
    assert_eq!(rep.rows[1].censored, 0.0);
}

#[test]
fn slope_minus_one_orbits_stay_injective() {
    // reflect [0, 1) into [1, 2), then translate
    let sys = DiscreteSystem::new(
        Domain::HalfLine,
        vec![
            Piece::new(0.0, 1.0, -1.0, 2.0),
            Piece::new(1.0, f64::INFINITY, 1.0, 1.0),
        ],
        SurfaceSpec::Empty,
    )
    .unwrap();
    let mut all: Vec<f64> = (0..500)
        .flat_map(|i| forward_orbit(&sys, (i as f64 + 0.5) / 500.0, 4).unwrap())
        .collect();
    let k = all.len();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    assert_eq!(all.len(), k);
    assert!(check_measure_preservation(&sys, 1e-3).unwrap().preserving);
}

#[test]
fn doubling_is_flagged() {
    let sys = DiscreteSystem::new(
        Domain::HalfLine,
        vec![Piece::new(0.0, f64::INFINITY, 2.0, 0.0)],
        SurfaceSpec::Empty,
    )
    .unwrap();
    let c = check_measure_preservation(&sys, 1e-2).unwrap();
    assert!(!c.preserving);
    assert!((c.max_distortion - 1e-2).abs() < 1e-12);
}

/// A block map: cell `i` of `[j, j+1)` goes to cell `perm[i]` of
/// `[j+1, j+2)`, reversed where `flip[i]`; a translation beyond `blocks`.
fn block_system(
    perm: &[usize],
    flip: &[bool],
    blocks: usize,
    surfaces: Vec<Vec<(f64, f64)>>,
) -> DiscreteSystem {
    let k = perm.len();
    let w = 1.0 / k as f64;
    let mut pieces = Vec::new();
    for j in 0..blocks {
        for i in 0..k {
            let lo = j as f64 + i as f64 * w;
            let target = (j + 1) as f64 + perm[i] as f64 * w;
            if flip[i] {
                pieces.push(Piece::new(lo, lo + w, -1.0, target + w + lo));
            } else {
                pieces.push(Piece::new(lo, lo + w, 1.0, target - lo));
            }
        }
    }
    pieces.push(Piece::new(blocks as f64, f64::INFINITY, 1.0, 1.0));
    DiscreteSystem::new(Domain::HalfLine, pieces, SurfaceSpec::Explicit { sets: surfaces }).unwrap()
}

/// Pushes interval sets through the block map exactly.
fn push(sys: &DiscreteSystem, set: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a, b) in set {
        for p in &sys.pieces {
            let lo = a.max(p.lo);
            let hi = b.min(p.hi);
            if hi > lo {
                let (x, y) = (p.slope * lo + p.offset, p.slope * hi + p.offset);
                out.push((x.min(y), x.max(y)));
            }
        }
    }
    out
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(x0, x1) in a {
        for &(y0, y1) in b {
            let lo = x0.max(y0);
            let hi = x1.min(y1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    out
}

fn length(set: &[(f64, f64)]) -> f64 {
    set.iter().map(|(a, b)| b - a).sum()
}

fn block_case() -> impl Strategy<Value = (Vec<usize>, Vec<bool>, Vec<Vec<(f64, f64)>>, u32)> {
    (2usize..6).prop_flat_map(|k| {
        let fine = 2 * k;
        (
            Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
            proptest::collection::vec(any::<bool>(), k),
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), fine), 6),
            1u32..4,
        )
            .prop_map(move |(perm, flip, masks, m0)| {
                let sets = masks
                    .iter()
                    .enumerate()
                    .map(|(j, mask)| {
                        let m = (j + 1) as f64;
                        mask.iter()
                            .enumerate()
                            .filter(|(_, &on)| on)
                            .map(|(c, _)| {
                                let a = m + c as f64 / fine as f64;
                                (a, a + 1.0 / fine as f64)
                            })
                            .collect()
                    })
                    .collect();
                (perm, flip, sets, m0)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_estimate_matches_interval_oracle((perm, flip, sets, m0) in block_case()) {
        let depth = 6u32;
        let sys = block_system(&perm, &flip, depth as usize + 1, sets.clone());
        prop_assert!(check_measure_preservation(&sys, 1.0 / 64.0).unwrap().preserving);
        let opts = DiscreteOptions { grid: 12_000, ..Default::default() };
        let rep = estimate_transition_measure_discrete(&sys, m0, depth, &opts).unwrap();
        let mut set = vec![(0.0, 1.0)];
        for m in 1..=depth {
            set = push(&sys, &set);
            if m >= m0 {
                set = intersect(&set, &sets[m as usize - 1]);
                let row = &rep.rows[(m - m0) as usize];
                prop_assert!((row.estimate.value - length(&set)).abs() <= rep.resolution);
                prop_assert_eq!(row.censored, 0.0);
                // injection bound
                let min_area = (m0..=m)
                    .map(|j| sys.surfaces.measure(j))
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(row.estimate.value <= min_area + rep.resolution);
            }
        }
        for w in rep.rows.windows(2) {
            prop_assert!(w[1].estimate.value <= w[0].estimate.value);
        }
    }
}
