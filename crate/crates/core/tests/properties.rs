use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ooc_pll::datagen::{generate_candidates, swap_out_true_label, CandidateMask};
use ooc_pll::disambiguation::{gen_random_candidates, update_conf_normal, update_conf_reversed, LdNorm};
use ooc_pll::losses::{decoupled_ce, wooden_ce, PartLosses};
use ooc_pll::model::{cosine_lr, softmax, Mlp};
use ooc_pll::selection::{partition_scores, warmup_ensemble, Assigned, SelectionOrder};

fn mask_strategy(c: usize) -> impl Strategy<Value = CandidateMask> {
    proptest::collection::vec(any::<bool>(), c).prop_filter_map("non-empty", |bits| {
        if bits.iter().any(|&b| b) {
            CandidateMask::from_bits(bits).ok()
        } else {
            None
        }
    })
}

fn probs_and_mask() -> impl Strategy<Value = (Vec<f64>, CandidateMask)> {
    (2usize..=12).prop_flat_map(|c| {
        (
            proptest::collection::vec(-6.0f64..6.0, c).prop_map(|z| softmax(&z)),
            mask_strategy(c),
        )
    })
}

fn scores_strategy() -> impl Strategy<Value = Vec<PartLosses>> {
    proptest::collection::vec((0.0f64..8.0, 0.0f64..8.0), 1..200).prop_map(|v| {
        v.into_iter()
            .map(|(candidate, non_candidate)| PartLosses {
                candidate,
                non_candidate,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn wooden_is_neg_log_of_part_maximum((probs, mask) in probs_and_mask()) {
        let w = wooden_ce(&probs, &mask).unwrap();
        let max_c = mask.candidates().map(|j| probs[j]).fold(0.0, f64::max);
        prop_assert!((w.candidate - (-max_c.ln())).abs() < 1e-12);
        if mask.non_candidate_count() == 0 {
            prop_assert!(w.non_candidate.is_infinite());
        } else {
            let max_n = mask.non_candidates().map(|j| probs[j]).fold(0.0, f64::max);
            prop_assert!((w.non_candidate - (-max_n.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn wooden_never_exceeds_decoupled((probs, mask) in probs_and_mask()) {
        let w = wooden_ce(&probs, &mask).unwrap();
        let d = decoupled_ce(&probs, &mask).unwrap();
        prop_assert!(w.candidate <= d.candidate + 1e-12);
        if mask.non_candidate_count() > 0 {
            prop_assert!(w.non_candidate <= d.non_candidate + 1e-12);
        }
    }

    #[test]
    fn normal_rows_are_distributions_on_the_mask((probs, mask) in probs_and_mask()) {
        let p = update_conf_normal(&probs, &mask, LdNorm::Masked).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (j, v) in p.iter().enumerate() {
            prop_assert!(*v >= 0.0);
            if !mask.contains(j) {
                prop_assert_eq!(*v, 0.0);
            } else {
                prop_assert!(*v > 0.0);
            }
        }
        // Mapping twice with the same outputs gives the same row.
        prop_assert_eq!(update_conf_normal(&probs, &mask, LdNorm::Masked).unwrap(), p.clone());
        // Order among candidates follows the outputs.
        for a in mask.candidates() {
            for b in mask.candidates() {
                if probs[a] > probs[b] {
                    prop_assert!(p[a] > p[b]);
                }
            }
        }
    }

    #[test]
    fn reversed_is_normal_on_the_complement((probs, mask) in probs_and_mask()) {
        match mask.complement() {
            Ok(comp) => {
                let r = update_conf_reversed(&probs, &mask, LdNorm::Masked).unwrap();
                prop_assert_eq!(r, update_conf_normal(&probs, &comp, LdNorm::Masked).unwrap());
            }
            Err(_) => prop_assert!(update_conf_reversed(&probs, &mask, LdNorm::Masked).is_err()),
        }
    }

    #[test]
    fn partitions_are_exact(scores in scores_strategy(), g1 in 0.0f64..0.5, g2 in 0.0f64..0.49, closed_first: bool) {
        let order = if closed_first { SelectionOrder::ClosedFirst } else { SelectionOrder::OpenFirst };
        let n = scores.len();
        let p = partition_scores(&scores, g1, g2, order).unwrap();
        let count = |a| p.assignment().iter().filter(|&&x| x == a).count();
        prop_assert_eq!(count(Assigned::Closed), (g1 * n as f64).floor() as usize);
        prop_assert_eq!(count(Assigned::Open), (g2 * n as f64).floor() as usize);
        let all: HashSet<usize> = p.normal_idx().into_iter()
            .chain(p.closed_idx()).chain(p.open_idx()).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(p.clone(), partition_scores(&scores, g1, g2, order).unwrap());
    }

    #[test]
    fn partition_is_rank_based(scores in scores_strategy(), g1 in 0.0f64..0.5, g2 in 0.0f64..0.49) {
        // Scaling both parts by one positive factor scales every score and
        // keeps every ranking.
        let scaled: Vec<PartLosses> = scores.iter().map(|s| PartLosses {
            candidate: 3.0 * s.candidate,
            non_candidate: 3.0 * s.non_candidate,
        }).collect();
        prop_assert_eq!(
            partition_scores(&scores, g1, g2, SelectionOrder::OpenFirst).unwrap().assignment().to_vec(),
            partition_scores(&scaled, g1, g2, SelectionOrder::OpenFirst).unwrap().assignment().to_vec()
        );
    }

    #[test]
    fn ensemble_rows_stay_normalized(
        rows in proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, 5), 1..20),
        phi in 1usize..5,
        eta in 0.0f64..=1.0,
    ) {
        let history: Vec<Vec<Vec<f64>>> = (0..phi)
            .map(|k| rows.iter().map(|z| softmax(&z.iter().map(|v| v * (k + 1) as f64).collect::<Vec<_>>())).collect())
            .collect();
        let mut ens = warmup_ensemble(&history, eta).unwrap();
        let current: Vec<Vec<f64>> = rows.iter().map(|z| softmax(&z.iter().map(|v| -v).collect::<Vec<_>>())).collect();
        ens.moving_update(&current).unwrap();
        for r in ens.outputs() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn candidates_keep_true_label(seed: u64, c in 2usize..20, q in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = (seed as usize) % c;
        let m = generate_candidates(y, q, c, &mut rng).unwrap();
        prop_assert!(m.contains(y));
        if m.non_candidate_count() > 0 {
            let s = swap_out_true_label(&m, y, &mut rng).unwrap();
            prop_assert!(!s.contains(y));
            prop_assert_eq!(s.candidate_count(), m.candidate_count());
        }
    }

    #[test]
    fn random_candidates_are_never_empty(seed: u64, c in 2usize..20, rho in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(gen_random_candidates(c, rho, &mut rng).unwrap().candidate_count() >= 1);
    }

    #[test]
    fn cosine_stays_in_range(base in 0.0f64..1.0, total in 1usize..500, epoch in 0usize..500) {
        let lr = cosine_lr(base, epoch.min(total), total);
        prop_assert!(lr >= 0.0 && lr <= base + 1e-15);
    }

    #[test]
    fn checkpoint_round_trips(seed: u64, hidden in proptest::collection::vec(1usize..8, 0..3)) {
        let mut sizes = vec![3];
        sizes.extend(hidden);
        sizes.push(4);
        let m = Mlp::new(&sizes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let back = Mlp::from_checkpoint(&m.to_checkpoint()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn open_masks_change_every_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let draws: Vec<String> = (0..2000)
        .map(|_| gen_random_candidates(10, 0.5, &mut rng).unwrap().to_bit_string())
        .collect();
    // 1023 non-empty masks: a redraw repeats about once in a thousand.
    let repeats = draws.windows(2).filter(|w| w[0] == w[1]).count();
    assert!(repeats <= 10, "{repeats} repeated redraws");
    // Birthday bound for 100 uniform draws is about 95 distinct.
    let distinct: usize = draws.chunks(100).map(|c| c.iter().collect::<HashSet<_>>().len()).sum();
    assert!(distinct >= 20 * 92, "{distinct} distinct over 20 groups");
}
