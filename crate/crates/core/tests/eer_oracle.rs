//! Equivalence of `compute_eer` against an independent brute-force sweep,
//! plus the invariances that pin down the metric's geometry.

use loralab::evaluation::{compute_eer, far_frr_at, Label, TrialScore};
use loralab::numerics::RngStream;
use proptest::prelude::*;

fn trials(genuine: &[f64], spoof: &[f64]) -> Vec<TrialScore> {
    let mut out = Vec::new();
    for (i, &s) in genuine.iter().enumerate() {
        out.push(TrialScore {
            trial_id: format!("g{i}"),
            label: Label::Genuine,
            score: s,
        });
    }
    for (i, &s) in spoof.iter().enumerate() {
        out.push(TrialScore {
            trial_id: format!("s{i}"),
            label: Label::Spoof,
            score: s,
        });
    }
    out
}

/// Brute-force reference: counts both error rates directly at every
/// candidate threshold (sentinels below/above everything plus the midpoint
/// of every adjacent distinct pair, where the strict-inequality rates are
/// unambiguous), then walks the candidates for the equality point or the
/// sign change, interpolating linearly between the bracketing candidates.
fn eer_brute_force(genuine: &[f64], spoof: &[f64]) -> f64 {
    let mut all: Vec<f64> = genuine.iter().chain(spoof.iter()).cloned().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();

    let mut candidates = vec![all[0] - 1.0];
    for i in 1..all.len() {
        candidates.push(0.5 * (all[i - 1] + all[i]));
    }
    candidates.push(all[all.len() - 1] + 1.0);

    let rate_at = |theta: f64| -> (f64, f64) {
        let mut fa = 0usize;
        for s in spoof {
            if *s > theta {
                fa += 1;
            }
        }
        let mut miss = 0usize;
        for g in genuine {
            if *g < theta {
                miss += 1;
            }
        }
        (
            fa as f64 / spoof.len() as f64,
            miss as f64 / genuine.len() as f64,
        )
    };

    let evaluated: Vec<(f64, f64)> = candidates.iter().map(|t| rate_at(*t)).collect();
    for (i, (fa, miss)) in evaluated.iter().enumerate() {
        let diff = fa - miss;
        if diff == 0.0 {
            return *fa;
        }
        if diff < 0.0 {
            let (pfa, pmiss) = evaluated[i - 1];
            let pdiff = pfa - pmiss;
            let t = pdiff / (pdiff - diff);
            let fa_star = pfa + t * (fa - pfa);
            let miss_star = pmiss + t * (miss - pmiss);
            return 0.5 * (fa_star + miss_star);
        }
    }
    unreachable!("rates start at (1,0) and end at (0,1)")
}

#[test]
fn matches_brute_force_on_200_random_score_sets() {
    let mut rng = RngStream::new(0xEE5);
    for case in 0..200 {
        let n_genuine = 2 + (rng.next_below(199)) as usize;
        let n_spoof = 2 + (rng.next_below(199)) as usize;
        let separation = rng.next_uniform() * 2.0;
        let mut genuine: Vec<f64> = (0..n_genuine)
            .map(|_| rng.next_gaussian() + separation)
            .collect();
        let mut spoof: Vec<f64> = (0..n_spoof).map(|_| rng.next_gaussian()).collect();
        // Inject duplicates within and across classes.
        for _ in 0..(n_genuine / 4).max(1) {
            let i = rng.next_below(n_genuine as u64) as usize;
            let j = rng.next_below(n_genuine as u64) as usize;
            genuine[i] = genuine[j];
        }
        for _ in 0..(n_spoof / 4).max(1) {
            let i = rng.next_below(n_spoof as u64) as usize;
            let j = rng.next_below(n_genuine as u64) as usize;
            spoof[i] = genuine[j];
        }

        let expected = eer_brute_force(&genuine, &spoof);
        let got = compute_eer(&trials(&genuine, &spoof)).unwrap();
        assert!(
            (got.eer - expected).abs() <= 1e-12,
            "case {case}: eer {} vs brute force {expected}",
            got.eer
        );
        assert!((0.0..=1.0).contains(&got.eer));
        assert!(
            (got.far_at - got.frr_at).abs() <= 1e-9,
            "rates differ at the operating point"
        );

        // The operating point lies inside the swept range, below the
        // crossing the false-alarm rate dominates and above it the miss
        // rate does (evaluated at tie-free offsets).
        let lo = genuine.iter().chain(&spoof).cloned().fold(f64::INFINITY, f64::min);
        let hi = genuine.iter().chain(&spoof).cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(got.threshold >= lo - 1.0 && got.threshold <= hi + 1.0);
        let set = trials(&genuine, &spoof);
        let (fa_below, miss_below) = far_frr_at(&set, lo - 0.5).unwrap();
        let (fa_above, miss_above) = far_frr_at(&set, hi + 0.5).unwrap();
        assert!(fa_below >= miss_below && fa_above <= miss_above);
    }
}

#[test]
fn perfect_and_inverted_separation_hit_the_bounds() {
    let mut rng = RngStream::new(9);
    for _ in 0..50 {
        let n = 2 + rng.next_below(40) as usize;
        let genuine: Vec<f64> = (0..n).map(|_| 10.0 + rng.next_uniform()).collect();
        let spoof: Vec<f64> = (0..n).map(|_| rng.next_uniform()).collect();
        assert_eq!(compute_eer(&trials(&genuine, &spoof)).unwrap().eer, 0.0);
        assert_eq!(compute_eer(&trials(&spoof, &genuine)).unwrap().eer, 1.0);
    }
}

proptest! {
    #[test]
    fn strictly_increasing_transforms_leave_eer_unchanged(
        genuine in prop::collection::vec(-5.0f64..5.0, 2..40),
        spoof in prop::collection::vec(-5.0f64..5.0, 2..40),
        scale in 0.25f64..4.0,
        shift in -3.0f64..3.0,
    ) {
        let base = compute_eer(&trials(&genuine, &spoof)).unwrap().eer;

        let affine = |v: f64| scale * v + shift;
        let cubic = |v: f64| v * v * v;
        for transform in [&affine as &dyn Fn(f64) -> f64, &cubic] {
            let g2: Vec<f64> = genuine.iter().map(|v| transform(*v)).collect();
            let s2: Vec<f64> = spoof.iter().map(|v| transform(*v)).collect();
            let mapped = compute_eer(&trials(&g2, &s2)).unwrap().eer;
            prop_assert!((mapped - base).abs() <= 1e-12,
                "transform changed eer: {base} -> {mapped}");
        }
    }

    #[test]
    fn negating_scores_and_swapping_labels_preserves_eer(
        genuine in prop::collection::vec(-5.0f64..5.0, 2..40),
        spoof in prop::collection::vec(-5.0f64..5.0, 2..40),
    ) {
        let base = compute_eer(&trials(&genuine, &spoof)).unwrap().eer;
        let neg_spoof: Vec<f64> = genuine.iter().map(|v| -v).collect();
        let neg_genuine: Vec<f64> = spoof.iter().map(|v| -v).collect();
        let swapped = compute_eer(&trials(&neg_genuine, &neg_spoof)).unwrap().eer;
        prop_assert!((swapped - base).abs() <= 1e-12, "{base} vs {swapped}");
    }
}
