mod common;

use common::random_cells;
use fewshot_core::eval::{aggregate_accuracies, average_rank, rank_methods, ties, AggregateCell};
use fewshot_core::rng::SeedStream;
use proptest::prelude::*;

fn cells(raw: &[(f64, f64)]) -> Vec<AggregateCell> {
    raw.iter()
        .map(|&(mean, ci_halfwidth)| AggregateCell { mean, ci_halfwidth, n: 600 })
        .collect()
}

/// Rank of every method by walking the sorted list and opening a new group
/// whenever a method no longer ties the first method of the current group.
fn oracle_ranks(c: &[AggregateCell]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| {
        (c[b].mean, c[b].ci_halfwidth)
            .partial_cmp(&(c[a].mean, c[a].ci_halfwidth))
            .unwrap()
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if {
                let lead = &c[g[0]];
                let d = (lead.mean - c[i].mean).abs();
                d == 0.0 || d * d < lead.ci_halfwidth.powi(2) + c[i].ci_halfwidth.powi(2)
            } => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let mut ranks = vec![0.0; c.len()];
    let mut pos = 0;
    for g in groups {
        let avg = (pos + 1..=pos + g.len()).sum::<usize>() as f64 / g.len() as f64;
        for i in &g {
            ranks[*i] = avg;
        }
        pos += g.len();
    }
    ranks
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ranks_match_the_oracle(seed in any::<u64>(), m in 1usize..12) {
        let c = cells(&random_cells(&mut SeedStream::new(seed), m));
        let got = rank_methods(&c);
        let want = oracle_ranks(&c);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12, "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn ranks_sum_to_the_triangle_number(seed in any::<u64>(), m in 1usize..12) {
        let r = rank_methods(&cells(&random_cells(&mut SeedStream::new(seed), m)));
        let total: f64 = r.iter().sum();
        prop_assert!((total - (m * (m + 1)) as f64 / 2.0).abs() < 1e-9);
        prop_assert!(r.iter().all(|&x| (1.0..=m as f64).contains(&x)));
    }

    #[test]
    fn ranks_do_not_depend_on_method_order(seed in any::<u64>(), m in 2usize..12) {
        let mut rng = SeedStream::new(seed);
        let c = cells(&random_cells(&mut rng, m));
        let r = rank_methods(&c);
        let mut perm: Vec<usize> = (0..m).collect();
        rng.shuffle(&mut perm);
        let shuffled: Vec<AggregateCell> = perm.iter().map(|&i| c[i]).collect();
        let rs = rank_methods(&shuffled);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(rs[k], r[i]);
        }
    }

    #[test]
    fn higher_means_never_rank_worse(seed in any::<u64>(), m in 2usize..12) {
        let c = cells(&random_cells(&mut SeedStream::new(seed), m));
        let r = rank_methods(&c);
        for i in 0..m {
            for j in 0..m {
                if c[i].mean > c[j].mean {
                    prop_assert!(r[i] <= r[j]);
                }
            }
        }
    }

    #[test]
    fn tie_relation_is_symmetric(a in 0.0f64..100.0, b in 0.0f64..100.0, ha in 0.0f64..3.0, hb in 0.0f64..3.0) {
        let x = AggregateCell { mean: a, ci_halfwidth: ha, n: 2 };
        let y = AggregateCell { mean: b, ci_halfwidth: hb, n: 2 };
        prop_assert_eq!(ties(&x, &y), ties(&y, &x));
        prop_assert!(ties(&x, &x));
    }

    #[test]
    fn average_ranks_sum_to_the_triangle_number(seed in any::<u64>(), m in 1usize..10, d in 1usize..8) {
        let mut rng = SeedStream::new(seed);
        let ranks: Vec<Vec<f64>> = (0..d).map(|_| rank_methods(&cells(&random_cells(&mut rng, m)))).collect();
        let avg = average_rank(&ranks).unwrap();
        prop_assert!((avg.iter().sum::<f64>() - (m * (m + 1)) as f64 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn interval_shifts_and_scales_with_the_data(xs in prop::collection::vec(0.0f64..=1.0, 2..60), k in 0.1f64..1.0) {
        let base = aggregate_accuracies(&xs).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        let s = aggregate_accuracies(&scaled).unwrap();
        prop_assert!((s.mean - k * base.mean).abs() < 1e-9);
        prop_assert!((s.ci_halfwidth - k * base.ci_halfwidth).abs() < 1e-9);
        prop_assert!(base.ci_halfwidth >= 0.0);
    }
}
