use num_rational::Ratio;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::data::Accuracy;
use crate::rng::run_rng;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("C{i}")).collect()
}

fn table(rows: &[(&str, &[&str])]) -> AccuracyTable {
    let n = rows[0].1.len();
    AccuracyTable::new(
        rows.iter().map(|r| r.0.to_string()).collect(),
        (0..n).map(|d| format!("D{d}")).collect(),
        rows.iter().map(|r| r.1.iter().map(|a| a.parse::<Accuracy>().unwrap()).collect()).collect(),
    )
    .unwrap()
}

/// Rank by counting: `#better + (#equal + 1) / 2`, higher value = better.
fn naive_descending_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let better = v.iter().filter(|y| *y > x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            better + (equal + 1.0) / 2.0
        })
        .collect()
}

#[test]
fn tie_averaged_ranks() {
    assert_eq!(rank_row(&[0.9, 0.8, 0.9]), vec![1.5, 3.0, 1.5]);
    let t = table(&[("A", &["0.9"]), ("B", &["0.8"]), ("C", &["0.90"])]);
    assert_eq!(average_ranks(&t).unwrap().average, vec![1.5, 3.0, 1.5]);
    let same = table(&[("A", &["0.5", "0.7"]), ("B", &["0.5", "0.7"]), ("C", &["0.5", "0.7"]), ("D", &["0.5", "0.7"])]);
    assert_eq!(average_ranks(&same).unwrap().average, vec![2.5; 4]);
}

#[test]
fn strict_wins() {
    let t = table(&[("A", &["0.9", "0.5", "0.7"]), ("B", &["0.8", "0.6", "0.7"])]);
    assert_eq!(wins(&t.exact_matrix()).unwrap(), vec![1, 1]);
}

proptest! {
    #[test]
    fn rank_rows_sum_to_triangular_number(row in prop::collection::vec(0u8..5, 2..10)) {
        let vals: Vec<f64> = row.iter().map(|&v| v as f64 / 4.0).collect();
        let ranks = rank_row(&vals);
        let k = vals.len() as f64;
        prop_assert_eq!(ranks.iter().sum::<f64>(), k * (k + 1.0) / 2.0);
        prop_assert_eq!(ranks, naive_descending_ranks(&vals));
    }
}

#[test]
fn friedman_hand_case() {
    // ranks (1, 2, 3) on all four datasets
    let m = vec![vec![0.9, 0.8, 0.95, 0.7], vec![0.8, 0.7, 0.9, 0.6], vec![0.7, 0.6, 0.85, 0.5]];
    let (k, n) = (3.0, 4.0);
    let rbar = [1.0, 2.0, 3.0];
    let hand = 12.0 * n / (k * (k + 1.0)) * rbar.iter().map(|r: &f64| (r - (k + 1.0) / 2.0).powi(2)).sum::<f64>();
    assert_eq!(hand, 8.0);
    let f = friedman_test_of(&m).unwrap();
    assert!((f.statistic - 8.0).abs() < 1e-12);
    assert!((f.p_value - 0.018).abs() < 1e-3);
    assert!((f.p_value - (-4.0f64).exp()).abs() < 1e-12);
}

#[test]
fn friedman_all_tied_and_too_small() {
    let m = vec![vec![0.5, 0.6, 0.7]; 4];
    let f = friedman_test_of(&m).unwrap();
    assert_eq!((f.statistic, f.p_value), (0.0, 1.0));
    assert!(friedman_test_of(&[vec![0.5, 0.6], vec![0.4, 0.3]]).is_err());
    assert!(friedman_test_of(&[vec![0.5], vec![0.4], vec![0.3]]).is_err());
}

fn random_matrix(k: usize, n: usize, levels: u32, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = run_rng(seed);
    (0..k).map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn friedman_matches_the_rank_variance_form(k in 3usize..7, n in 2usize..12, seed in any::<u64>()) {
        let m = random_matrix(k, n, 4, seed);
        // (k - 1) * sum_j (R_j - n(k+1)/2)^2 / (sum_ij r_ij^2 - n k (k+1)^2 / 4)
        let ranks: Vec<Vec<f64>> = (0..n).map(|d| naive_descending_ranks(&m.iter().map(|r| r[d]).collect::<Vec<_>>())).collect();
        let (kf, nf) = (k as f64, n as f64);
        let sums: Vec<f64> = (0..k).map(|c| ranks.iter().map(|r| r[c]).sum()).collect();
        let a: f64 = ranks.iter().flatten().map(|r| r * r).sum();
        let c = nf * kf * (kf + 1.0).powi(2) / 4.0;
        let f = friedman_test_of(&m).unwrap();
        if (a - c).abs() < 1e-9 {
            prop_assert_eq!(f.statistic, 0.0);
        } else {
            let oracle = (kf - 1.0) * sums.iter().map(|s| (s - nf * (kf + 1.0) / 2.0).powi(2)).sum::<f64>() / (a - c);
            prop_assert!((f.statistic - oracle).abs() < 1e-9 * oracle.max(1.0), "{} vs {}", f.statistic, oracle);
        }
        prop_assert!((0.0..=1.0).contains(&f.p_value));
    }

    #[test]
    fn friedman_ignores_dataset_order_and_monotone_rescaling(k in 3usize..6, n in 2usize..10, seed in any::<u64>()) {
        let m = random_matrix(k, n, 5, seed);
        let base = friedman_test_of(&m).unwrap();
        let reversed: Vec<Vec<f64>> = m.iter().map(|r| r.iter().rev().copied().collect()).collect();
        prop_assert_eq!(friedman_test_of(&reversed).unwrap(), base);
        // a different strictly increasing map on every dataset
        let warped: Vec<Vec<f64>> = m.iter().map(|r| r.iter().enumerate().map(|(d, v)| (v * (d + 1) as f64).exp() + d as f64).collect()).collect();
        let w = friedman_test_of(&warped).unwrap();
        prop_assert!((w.statistic - base.statistic).abs() < 1e-12 && (w.p_value - base.p_value).abs() < 1e-12);
    }
}

/// Two-sided p by enumerating every sign assignment of the ranked |d|.
fn brute_force_wilcoxon(a: &[i64], b: &[i64]) -> (f64, f64) {
    let d: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0).collect();
    let n = d.len();
    let mag: Vec<f64> = d.iter().map(|v| v.abs() as f64).collect();
    let ranks: Vec<f64> = mag
        .iter()
        .map(|m| {
            let less = mag.iter().filter(|x| *x < m).count() as f64;
            let equal = mag.iter().filter(|x| *x == m).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0).map(|(_, r)| r).sum();
    let w_minus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v < 0).map(|(_, r)| r).sum();
    let w = w_plus.min(w_minus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w {
            hits += 1;
        }
    }
    (w, (2.0 * hits as f64 / 2f64.powi(n as i32)).min(1.0))
}

#[test]
fn wilcoxon_examples() {
    let same = [0.5, 0.6, 0.7];
    let r = wilcoxon_signed_rank(&same, &same).unwrap();
    assert_eq!((r.method, r.p_value), (WilcoxonMethod::Degenerate, 1.0));

    let a = [1.5, 2.5, 3.5, 4.5, 5.5];
    let b = [1.0, 2.0, 2.0, 2.0, 1.0];
    let r = wilcoxon_signed_rank(&a, &b).unwrap();
    assert_eq!((r.w_minus, r.n, r.method), (0.0, 5, WilcoxonMethod::Exact));
    assert_eq!(r.p_value, 2.0 / 32.0);
    assert!(wilcoxon_signed_rank(&a, &b[..3]).is_err());
}

#[test]
fn exact_wilcoxon_matches_enumeration_on_200_cases() {
    let mut rng = run_rng(2024);
    for case in 0..200 {
        let n = rng.random_range(1..=12);
        let a: Vec<i64> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let b: Vec<i64> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let ra: Vec<Ratio<i64>> = a.iter().map(|&v| Ratio::new(v, 8)).collect();
        let rb: Vec<Ratio<i64>> = b.iter().map(|&v| Ratio::new(v, 8)).collect();
        let got = wilcoxon_signed_rank(&ra, &rb).unwrap();
        if a == b {
            assert_eq!(got.method, WilcoxonMethod::Degenerate);
            continue;
        }
        let (w, p) = brute_force_wilcoxon(&a, &b);
        assert_eq!(got.statistic, w, "case {case}");
        assert_eq!(got.p_value, p, "case {case}: {a:?} {b:?}");
    }
}

#[test]
fn normal_approximation_for_large_samples() {
    let a: Vec<f64> = (0..40).map(|i| 0.5 + i as f64 / 100.0).collect();
    let up: Vec<f64> = a.iter().map(|v| v - 0.01).collect();
    let r = wilcoxon_signed_rank(&a, &up).unwrap();
    assert_eq!(r.method, WilcoxonMethod::Normal);
    assert!(r.p_value < 1e-6);
    let mixed: Vec<f64> = a.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + 0.01 * (i + 1) as f64 } else { v - 0.01 * i as f64 }).collect();
    let r = wilcoxon_signed_rank(&a, &mixed).unwrap();
    assert!(r.p_value > 0.5, "{r:?}");

    // at the cutoff the approximation should sit close to the exact value
    let mut rng = run_rng(5);
    let x: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.5)).collect();
    let zero = vec![0.0; 25];
    let exact = wilcoxon_signed_rank(&x, &zero).unwrap();
    let mut x26 = x.clone();
    x26.push(1e-9);
    let mut z26 = zero.clone();
    z26.push(0.0);
    let approx = wilcoxon_signed_rank(&x26, &z26).unwrap();
    assert_eq!((exact.method, approx.method), (WilcoxonMethod::Exact, WilcoxonMethod::Normal));
    assert!((exact.p_value - approx.p_value).abs() < 0.05, "{exact:?} {approx:?}");
}

#[test]
fn holm_walk_through() {
    assert_eq!(holm_correction(&[0.01, 0.04, 0.03], 0.05), vec![true, false, false]);
    assert_eq!(holm_correction(&[1.0, 1.0], 0.05), vec![false, false]);
    assert_eq!(holm_correction(&[0.04], 0.05), vec![true]);
    assert_eq!(holm_correction(&[0.02, 0.001], 0.05), vec![true, true]);
}

proptest! {
    #[test]
    fn holm_is_monotone(ps in prop::collection::vec(0.0f64..0.2, 1..15)) {
        let d = holm_correction(&ps, 0.05);
        for i in 0..ps.len() {
            for j in 0..ps.len() {
                if ps[i] <= ps[j] && d[j] {
                    prop_assert!(d[i]);
                }
            }
        }
    }
}

fn rank_table(avg: &[f64]) -> RankTable {
    RankTable { classifiers: names(avg.len()), datasets: vec!["D".into()], ranks: vec![], average: avg.to_vec() }
}

fn pairs(k: usize, significant: impl Fn(usize, usize) -> bool) -> Vec<PairwiseTestResult> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            out.push(PairwiseTestResult {
                a: format!("C{i}"),
                b: format!("C{j}"),
                statistic: 0.0,
                p_value: if significant(i, j) { 0.0 } else { 1.0 },
                method: WilcoxonMethod::Exact,
                significant: significant(i, j),
            });
        }
    }
    out
}

/// Every subset of size >= 2 without a significant pair that no outside
/// classifier can join.
fn brute_force_cliques(k: usize, sig: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let ok = |m: u32| (0..k).all(|i| (0..k).all(|j| i == j || m >> i & 1 == 0 || m >> j & 1 == 0 || !sig(i.min(j), i.max(j))));
    let mut out = Vec::new();
    for m in 1u32..(1 << k) {
        if m.count_ones() < 2 || !ok(m) {
            continue;
        }
        if (0..k).any(|x| m >> x & 1 == 0 && ok(m | 1 << x)) {
            continue;
        }
        out.push((0..k).filter(|i| m >> i & 1 == 1).collect());
    }
    out.sort();
    out
}

#[test]
fn clique_examples() {
    let ranks = rank_table(&[1.0, 2.0, 3.0, 4.0]);
    let d = form_cliques(&ranks, &pairs(4, |_, _| false)).unwrap();
    assert_eq!(d.cliques, vec![vec![0, 1, 2, 3]]);
    let d = form_cliques(&ranks, &pairs(4, |_, _| true)).unwrap();
    assert!(d.cliques.is_empty());
    let d = form_cliques(&ranks, &pairs(4, |i, j| (i, j) == (0, 3))).unwrap();
    assert_eq!(d.clique_names(), vec![vec!["C0", "C1", "C2"], vec!["C1", "C2", "C3"]]);
    let mut missing = pairs(4, |_, _| false);
    missing.pop();
    assert!(matches!(form_cliques(&ranks, &missing), Err(Error::Spec(_))));
}

#[test]
fn cliques_match_subset_enumeration() {
    let mut rng = run_rng(77);
    for _ in 0..300 {
        let k = rng.random_range(2..=8);
        let density = rng.random_range(0.0..1.0);
        let sig: Vec<Vec<bool>> = (0..k).map(|_| (0..k).map(|_| rng.random_bool(density)).collect()).collect();
        let f = |i: usize, j: usize| sig[i][j];
        let avg: Vec<f64> = (0..k).map(|i| 1.0 + i as f64).collect();
        let d = form_cliques(&rank_table(&avg), &pairs(k, f)).unwrap();
        assert_eq!(d.cliques, brute_force_cliques(k, &f));
    }
}

#[test]
fn cd_rendering() {
    let ranks = rank_table(&[1.25, 1.75]);
    let d = form_cliques(&ranks, &pairs(2, |_, _| false)).unwrap();
    let svg = cd_svg(&d);
    assert_eq!(svg.matches(r#"class="clique""#).count(), 1);
    assert!(svg.contains("C0") && svg.contains("C1"));
    assert_eq!(svg, cd_svg(&d));
    assert!(cd_text(&d).contains("clique: C0, C1"));
    assert_eq!(axis_x(2.0, 3), (axis_x(1.0, 3) + axis_x(3.0, 3)) / 2.0);
    assert_eq!(axis_x(1.0, 6), CD_AXIS_LEFT);
    assert_eq!(axis_x(6.0, 6), CD_AXIS_LEFT + CD_AXIS_WIDTH);

    let dir = tempfile::tempdir().unwrap();
    render_cd_diagram(&d, dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("cd.svg")).unwrap(), svg);
}

#[test]
fn two_classifier_report_skips_friedman() {
    let t = table(&[("A", &["0.9", "0.8", "0.7"]), ("B", &["0.8", "0.8", "0.9"])]);
    let (report, _) = compare(&t, 0.05).unwrap();
    assert!(report.friedman.is_none());
    assert_eq!(report.notices.len(), 1);
    assert_eq!(report.pairwise.len(), 1);
    let one = table(&[("A", &["0.9"])]);
    assert!(compare(&one, 0.05).is_err());
}

#[test]
fn report_json_is_deterministic() {
    let t = table(&[("A", &["0.9", "0.8", "0.7", "0.6"]), ("B", &["0.8", "0.8", "0.9", "0.5"]), ("C", &["0.1", "0.2", "0.3", "0.4"])]);
    let (a, _) = compare(&t, 0.05).unwrap();
    let (b, _) = compare(&t, 0.05).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let back: StatReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
    assert_eq!(a.rank_order[0], "A");
}
