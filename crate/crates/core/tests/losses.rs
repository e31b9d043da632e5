use std::collections::BTreeSet;

use ciss_core::losses::{
    augmented_probs_ddot, augmented_probs_dot, evaluate, grad_check, grad_logits, loss_dkd_m_composite,
    loss_mbce, loss_mem, loss_membce, loss_mib_augm, loss_unce, loss_unkd, plop_m_compose,
    ExternalTerms, LossCase, LossConfig, LossItem, LossKind, TaskClassLayout,
};
use ciss_core::memory::LabelSource;
use ciss_core::{ClassId, Error, LabelGrid, ScoreMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::set;

const BG: u8 = 0;
const IGN: u8 = 255;

/// Independent reference implementation: plain exponentials, explicit sums.
mod oracle {
    pub fn softmax(row: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = row.iter().map(|z| z.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// Probability mass of the columns where `member` is true.
    pub fn mass(p: &[f64], member: &[bool]) -> f64 {
        p.iter().zip(member).filter(|(_, &m)| m).map(|(v, _)| v).sum()
    }
}

fn layout() -> TaskClassLayout {
    TaskClassLayout::new(set(&[1, 2]), set(&[3, 4])).unwrap()
}

/// Column order deliberately differs from class order.
fn class_map() -> Vec<ClassId> {
    [2u8, 0, 4, 1, 3].iter().copied().map(ClassId).collect()
}

fn prev_map() -> Vec<ClassId> {
    [1u8, 0, 2].iter().copied().map(ClassId).collect()
}

fn grid(v: &[u8]) -> LabelGrid {
    LabelGrid::from_raw(v.len(), 1, v).unwrap()
}

fn random_scores(rng: &mut ChaCha8Rng, map: Vec<ClassId>, n: usize) -> ScoreMatrix {
    let k = map.len();
    ScoreMatrix::new(map, (0..n * k).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, allowed: &[u8], n: usize) -> LabelGrid {
    let mut v: Vec<u8> = (0..n).map(|_| allowed[rng.random_range(0..allowed.len())]).collect();
    v[n - 1] = IGN;
    grid(&v)
}

fn item(source: LabelSource, scores: ScoreMatrix, labels: LabelGrid, prev: ScoreMatrix) -> LossItem {
    LossItem {
        source,
        scores,
        labels,
        prev_scores: Some(prev),
        external: ExternalTerms::default(),
    }
}

/// Two current and two memory items on the 5-class layout.
fn random_case(seed: u64, n: usize) -> LossCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for source in [LabelSource::Current, LabelSource::Current, LabelSource::Memory, LabelSource::Memory] {
        let allowed: &[u8] = match source {
            LabelSource::Current => &[BG, 3, 4],
            LabelSource::Memory => &[BG, 1, 2],
        };
        let scores = random_scores(&mut rng, class_map(), n);
        let labels = random_labels(&mut rng, allowed, n);
        let prev = random_scores(&mut rng, prev_map(), n);
        let mut it = item(source, scores, labels, prev);
        it.external = ExternalTerms {
            kd: Some(rng.random_range(0.0..2.0)),
            dkd: Some(rng.random_range(0.0..2.0)),
            ac: Some(rng.random_range(0.0..2.0)),
            pod: Some(rng.random_range(0.0..2.0)),
        };
        items.push(it);
    }
    LossCase {
        layout: layout(),
        items,
        config: LossConfig {
            lambda: 5.0,
            gamma: 1.7,
            alpha: 0.6,
            beta: 1.3,
            kd_includes_bg: true,
        },
    }
}

fn uniform(map: &[u8], n: usize) -> ScoreMatrix {
    ScoreMatrix::new(map.iter().copied().map(ClassId).collect(), vec![0.0; n * map.len()]).unwrap()
}

fn uniform_layout() -> TaskClassLayout {
    TaskClassLayout::new(set(&[1]), set(&[2, 3])).unwrap()
}

#[test]
#[allow(clippy::approx_constant)]
fn uniform_logit_closed_forms() {
    let s = uniform(&[0, 1, 2, 3], 1);
    let bg = grid(&[BG]);
    let lay = uniform_layout();
    assert!((loss_unce(&s, &bg, &lay).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
    assert!((loss_mem(&s, &bg, &lay).unwrap() - (-(0.75f64).ln())).abs() < 1e-9);
    let cfg = LossConfig {
        gamma: 1.0,
        ..Default::default()
    };
    let expect = -2.0 * (0.75f64).ln();
    assert!((loss_mbce(&s, &bg, &lay, &cfg).unwrap() - expect).abs() < 1e-9);
    assert!((expect - 0.575364).abs() < 1e-6);
    assert!((std::f64::consts::LN_2 - 0.693147).abs() < 1e-6);
    assert!((-(0.75f64).ln() - 0.287682).abs() < 1e-6);
}

#[test]
fn augmented_probabilities_uniform() {
    let s = uniform(&[0, 1, 2, 3], 1);
    let lay = uniform_layout();
    let dot = augmented_probs_dot(&s, &lay).unwrap();
    assert_eq!(dot.class_map, vec![ClassId(0), ClassId(1)]);
    assert!((dot.row(0)[0] - 0.75).abs() < 1e-15);
    assert!((dot.row(0)[1] - 0.25).abs() < 1e-15);
    let ddot = augmented_probs_ddot(&s, &lay).unwrap();
    assert_eq!(ddot.class_map, vec![ClassId(0), ClassId(2), ClassId(3)]);
    assert!((ddot.row(0)[0] - 0.5).abs() < 1e-15);
}

#[test]
fn augmented_probabilities_degenerate_cases() {
    // No mass on new classes: dot equals plain softmax restricted.
    let map: Vec<ClassId> = [0u8, 1, 2].iter().copied().map(ClassId).collect();
    let s = ScoreMatrix::new(map, vec![0.3, -0.2, -2000.0]).unwrap();
    let lay = TaskClassLayout::new(set(&[1]), set(&[2])).unwrap();
    let p = oracle::softmax(&[0.3, -0.2]);
    let dot = augmented_probs_dot(&s, &lay).unwrap();
    assert!((dot.row(0)[0] - p[0]).abs() < 1e-15 && (dot.row(0)[1] - p[1]).abs() < 1e-15);
    // Base task: no old classes, ddot is the plain softmax.
    let map: Vec<ClassId> = [0u8, 1, 2].iter().copied().map(ClassId).collect();
    let s = ScoreMatrix::new(map, vec![0.5, 1.0, -1.0]).unwrap();
    let lay = TaskClassLayout::new(BTreeSet::new(), set(&[1, 2])).unwrap();
    let ddot = augmented_probs_ddot(&s, &lay).unwrap();
    let p = oracle::softmax(&[0.5, 1.0, -1.0]);
    for (a, b) in ddot.row(0).iter().zip(&p) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn augmented_probabilities_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = random_scores(&mut rng, class_map(), 50);
    let lay = layout();
    let dot = augmented_probs_dot(&s, &lay).unwrap();
    let ddot = augmented_probs_ddot(&s, &lay).unwrap();
    for i in 0..50 {
        let p = oracle::softmax(s.row(i));
        let bg_col = 1;
        assert!((dot.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((ddot.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dot.row(i)[0] >= p[bg_col] - 1e-15);
        // ṗ_bg = p_bg + p_3 + p_4 (columns 4 and 2 in the class map).
        assert!((dot.row(i)[0] - (p[1] + p[2] + p[4])).abs() < 1e-12);
        // p̈_bg = p_bg + p_1 + p_2 (columns 3 and 0).
        assert!((ddot.row(i)[0] - (p[1] + p[0] + p[3])).abs() < 1e-12);
    }
}

#[test]
fn single_losses_match_oracle() {
    let lay = layout();
    let cfg = LossConfig {
        gamma: 1.7,
        ..Default::default()
    };
    // Column roles of class_map() = [2, 0, 4, 1, 3].
    let old_cols = [true, false, false, true, false];
    let new_cols = [false, false, true, false, true];
    let col_of = |c: u8| class_map().iter().position(|&x| x == ClassId(c)).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 7;
        let s = random_scores(&mut rng, class_map(), n);
        let prev = random_scores(&mut rng, prev_map(), n);
        let cur = random_labels(&mut rng, &[BG, 3, 4], n);
        let mem = random_labels(&mut rng, &[BG, 1, 2], n);

        let (mut unce, mut lmem, mut mbce, mut membce, mut kd, mut kd_nobg) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let valid = (n - 1) as f64;
        for i in 0..n {
            let p = oracle::softmax(s.row(i));
            let bg_old: Vec<bool> = (0..5).map(|j| j == 1 || old_cols[j]).collect();
            let bg_new: Vec<bool> = (0..5).map(|j| j == 1 || new_cols[j]).collect();
            let y = cur.pixels()[i];
            if !y.is_ignore() {
                unce -= if y.is_background() { oracle::mass(&p, &bg_old).ln() } else { p[col_of(y.0)].ln() };
                for c in [3u8, 4] {
                    let pc = p[col_of(c)];
                    mbce -= if y == ClassId(c) { cfg.gamma * pc.ln() } else { (1.0 - pc).ln() };
                }
            }
            let y = mem.pixels()[i];
            if !y.is_ignore() {
                lmem -= if y.is_background() { oracle::mass(&p, &bg_new).ln() } else { p[col_of(y.0)].ln() };
                for c in [1u8, 2] {
                    let pc = p[col_of(c)];
                    membce -= if y == ClassId(c) { cfg.gamma * pc.ln() } else { (1.0 - pc).ln() };
                }
            }
            let q = oracle::softmax(prev.row(i));
            // prev_map() = [1, 0, 2]
            let old_part = q[0] * p[col_of(1)].ln() + q[2] * p[col_of(2)].ln();
            kd_nobg -= old_part;
            kd -= old_part + q[1] * oracle::mass(&p, &bg_new).ln();
        }
        let nn = n as f64;
        assert!((loss_unce(&s, &cur, &lay).unwrap() - unce / valid).abs() < 1e-10);
        assert!((loss_mem(&s, &mem, &lay).unwrap() - lmem / valid).abs() < 1e-10);
        assert!((loss_mbce(&s, &cur, &lay, &cfg).unwrap() - mbce / valid).abs() < 1e-10);
        assert!((loss_membce(&s, &mem, &lay, &cfg).unwrap() - membce / valid).abs() < 1e-10);
        assert!((loss_unkd(&prev, &s, &lay, &cfg).unwrap() - kd / nn).abs() < 1e-10);
        let cfg_nobg = LossConfig {
            kd_includes_bg: false,
            ..cfg
        };
        assert!((loss_unkd(&prev, &s, &lay, &cfg_nobg).unwrap() - kd_nobg / nn).abs() < 1e-10);
    }
}

#[test]
fn unkd_limit_is_teacher_entropy() {
    let lay = uniform_layout(); // old {1}, new {2, 3}
    let prev_cm: Vec<ClassId> = [0u8, 1].iter().copied().map(ClassId).collect();
    let prev = ScoreMatrix::new(prev_cm, vec![0.4, -1.1, 2.0, 0.5]).unwrap();
    let cm: Vec<ClassId> = [0u8, 1, 2, 3].iter().copied().map(ClassId).collect();
    let curr = ScoreMatrix::new(cm, vec![0.4, -1.1, -1e3, -1e3, 2.0, 0.5, -1e3, -1e3]).unwrap();
    let cfg = LossConfig::default();
    let mut entropy = 0.0;
    for i in 0..2 {
        let q = oracle::softmax(prev.row(i));
        entropy -= q.iter().map(|v| v * v.ln()).sum::<f64>();
    }
    entropy /= 2.0;
    assert!((loss_unkd(&prev, &curr, &lay, &cfg).unwrap() - entropy).abs() < 1e-10);
}

#[test]
fn one_hot_limits_go_to_zero() {
    let lay = uniform_layout();
    let cm: Vec<ClassId> = [0u8, 1, 2, 3].iter().copied().map(ClassId).collect();
    let m = 60.0;
    // Pixel labelled old class 1, confident on it.
    let s = ScoreMatrix::new(cm.clone(), vec![0.0, m, 0.0, 0.0]).unwrap();
    assert!(loss_mem(&s, &grid(&[1]), &lay).unwrap() < 1e-20);
    // Pixel labelled new class 2, confident on it.
    let s = ScoreMatrix::new(cm.clone(), vec![0.0, 0.0, m, 0.0]).unwrap();
    assert!(loss_unce(&s, &grid(&[2]), &lay).unwrap() < 1e-20);
    assert!(loss_mbce(&s, &grid(&[2]), &lay, &LossConfig::default()).unwrap() < 1e-20);
    // Standard CE with one-hot correct scores.
    assert!(ciss_core::losses::loss_ce(&s, &grid(&[2])).unwrap() < 1e-20);
    // Teacher one-hot on class 1 and the student agrees.
    let prev = ScoreMatrix::new(vec![ClassId(0), ClassId(1)], vec![0.0, m]).unwrap();
    let s = ScoreMatrix::new(cm, vec![0.0, m, 0.0, 0.0]).unwrap();
    assert!(loss_unkd(&prev, &s, &lay, &LossConfig::default()).unwrap() < 1e-20);
}

#[test]
fn label_domain_errors() {
    let s = uniform(&[0, 1, 2, 3], 1);
    let lay = uniform_layout();
    assert!(matches!(loss_unce(&s, &grid(&[1]), &lay), Err(Error::InvalidLabel { .. })));
    assert!(matches!(loss_mem(&s, &grid(&[2]), &lay), Err(Error::InvalidLabel { .. })));
    let bad_gamma = LossConfig {
        gamma: 0.0,
        ..Default::default()
    };
    assert!(matches!(loss_mbce(&s, &grid(&[0]), &lay, &bad_gamma), Err(Error::Config(_))));
    let wrong_layout = TaskClassLayout::new(set(&[1]), set(&[2])).unwrap();
    assert!(matches!(loss_unce(&s, &grid(&[0]), &wrong_layout), Err(Error::LayoutMismatch(_))));
    assert!(loss_unce(&s, &grid(&[0, 0]), &lay).is_err());
    // All-ignore grids contribute zero.
    assert_eq!(loss_unce(&s, &grid(&[IGN]), &lay).unwrap(), 0.0);
}

#[test]
fn mib_augm_composition() {
    let case = random_case(7, 6);
    let lay = &case.layout;
    let cfg = &case.config;
    let it = &case.items;
    let unce = (loss_unce(&it[0].scores, &it[0].labels, lay).unwrap()
        + loss_unce(&it[1].scores, &it[1].labels, lay).unwrap())
        / 2.0;
    let kd: f64 = it
        .iter()
        .map(|x| loss_unkd(x.prev_scores.as_ref().unwrap(), &x.scores, lay, cfg).unwrap())
        .sum::<f64>()
        / 4.0;
    let mem = (loss_mem(&it[2].scores, &it[2].labels, lay).unwrap()
        + loss_mem(&it[3].scores, &it[3].labels, lay).unwrap())
        / 2.0;
    let total = loss_mib_augm(&case).unwrap();
    assert!((total - (unce + 5.0 * kd + mem)).abs() < 1e-12);
}

#[test]
fn mib_augm_degenerate_and_denominators() {
    let mut case = random_case(8, 5);
    // No memory, lambda 0: plain mean unce.
    case.items.truncate(2);
    case.config.lambda = 0.0;
    let unce = evaluate(LossKind::Unce, &case).unwrap();
    assert!((loss_mib_augm(&case).unwrap() - unce).abs() < 1e-15);

    // One current and one memory item: the distillation mean divides by 2.
    let mut case = random_case(9, 5);
    case.items.remove(1);
    case.items.remove(2);
    case.config.lambda = 1.0;
    let lay = &case.layout;
    let cfg = &case.config;
    let (a, b) = (&case.items[0], &case.items[1]);
    let kd_a = loss_unkd(a.prev_scores.as_ref().unwrap(), &a.scores, lay, cfg).unwrap();
    let kd_b = loss_unkd(b.prev_scores.as_ref().unwrap(), &b.scores, lay, cfg).unwrap();
    let expect = loss_unce(&a.scores, &a.labels, lay).unwrap()
        + (kd_a + kd_b) / 2.0
        + loss_mem(&b.scores, &b.labels, lay).unwrap();
    assert!((loss_mib_augm(&case).unwrap() - expect).abs() < 1e-12);

    case.items.remove(0);
    assert!(matches!(loss_mib_augm(&case), Err(Error::Empty(_))));
}

#[test]
fn dkd_m_composition() {
    let case = random_case(21, 6);
    let (lay, cfg, it) = (&case.layout, &case.config, &case.items);
    let distill: f64 = it
        .iter()
        .map(|x| cfg.alpha * x.external.kd.unwrap() + cfg.beta * x.external.dkd.unwrap())
        .sum::<f64>()
        / 4.0;
    let cur: f64 = it[..2]
        .iter()
        .map(|x| loss_mbce(&x.scores, &x.labels, lay, cfg).unwrap() + x.external.ac.unwrap())
        .sum::<f64>()
        / 2.0;
    let mem: f64 = it[2..]
        .iter()
        .map(|x| loss_membce(&x.scores, &x.labels, lay, cfg).unwrap())
        .sum::<f64>()
        / 2.0;
    assert!((loss_dkd_m_composite(&case).unwrap() - (distill + cur + mem)).abs() < 1e-12);

    // Zero external terms: only the binary cross-entropies remain.
    let mut zeroed = case.clone();
    for x in &mut zeroed.items {
        x.external = ExternalTerms {
            kd: Some(0.0),
            dkd: Some(0.0),
            ac: Some(0.0),
            pod: None,
        };
    }
    let bce_only = evaluate(LossKind::Mbce, &zeroed).unwrap() + evaluate(LossKind::Membce, &zeroed).unwrap();
    assert!((loss_dkd_m_composite(&zeroed).unwrap() - bce_only).abs() < 1e-12);

    // alpha = beta = 0: external distillation values do not matter.
    let mut a = case.clone();
    a.config.alpha = 0.0;
    a.config.beta = 0.0;
    let mut b = a.clone();
    for x in &mut b.items {
        x.external.kd = Some(123.0);
        x.external.dkd = Some(-7.0);
    }
    assert_eq!(loss_dkd_m_composite(&a).unwrap(), loss_dkd_m_composite(&b).unwrap());

    let mut missing = case.clone();
    missing.items[3].external.kd = None;
    assert!(matches!(loss_dkd_m_composite(&missing), Err(Error::MissingTerm(_))));
}

#[test]
fn plop_m_composition() {
    let mut case = random_case(31, 6);
    // Pseudo-labels may hold any mapped class.
    case.items[0].labels = grid(&[1, 2, 3, 4, 0, IGN]);
    let ce: Vec<f64> = case
        .items
        .iter()
        .map(|x| ciss_core::losses::loss_ce(&x.scores, &x.labels).unwrap())
        .collect();
    let lambda = case.config.lambda;
    let expect: f64 = case
        .items
        .iter()
        .zip(&ce)
        .map(|(x, c)| c + lambda * x.external.pod.unwrap())
        .sum::<f64>()
        / 4.0;
    assert!((plop_m_compose(&case).unwrap() - expect).abs() < 1e-12);

    for x in &mut case.items {
        x.external.pod = Some(0.0);
    }
    let mean_ce = ce.iter().sum::<f64>() / 4.0;
    assert!((plop_m_compose(&case).unwrap() - mean_ce).abs() < 1e-12);

    case.items[1].external.pod = None;
    assert!(matches!(plop_m_compose(&case), Err(Error::MissingTerm(_))));
}

#[test]
fn mem_is_unce_with_roles_swapped() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let s = random_scores(&mut rng, class_map(), 9);
        let labels = random_labels(&mut rng, &[BG, 1, 2], 9);
        let lay = layout();
        let a = loss_mem(&s, &labels, &lay).unwrap();
        let b = loss_unce(&s, &labels, &lay.swapped()).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn gradient_checks_every_loss() {
    let start = std::time::Instant::now();
    for kind in LossKind::ALL {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let case = random_case(1000 + seed, 6);
            let report = grad_check(kind, &case, 1e-5, 1e-6, usize::MAX, seed).unwrap();
            worst = worst.max(report.max_rel_err);
            assert!(report.passed, "{kind}: {report:?}");
        }
        eprintln!("{kind}: worst relative error {worst:.3e}");
    }
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn gradient_rows_sum_to_zero() {
    let s = uniform(&[0, 1, 2, 3], 3);
    let case = LossCase {
        layout: uniform_layout(),
        items: vec![LossItem {
            source: LabelSource::Current,
            scores: s,
            labels: grid(&[0, 2, 3]),
            prev_scores: None,
            external: ExternalTerms::default(),
        }],
        config: LossConfig::default(),
    };
    let g = grad_logits(LossKind::Unce, &case).unwrap();
    for row in g[0].chunks(4) {
        assert!(row.iter().sum::<f64>().abs() < 1e-15);
    }
}

#[test]
fn memory_loss_rewards_new_class_mass_on_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let s = random_scores(&mut rng, class_map(), 1);
    let case = LossCase {
        layout: layout(),
        items: vec![LossItem {
            source: LabelSource::Memory,
            scores: s,
            labels: grid(&[BG]),
            prev_scores: None,
            external: ExternalTerms::default(),
        }],
        config: LossConfig::default(),
    };
    let g = grad_logits(LossKind::Mem, &case).unwrap();
    // Columns 2 and 4 hold new classes 4 and 3.
    assert!(g[0][2] < 0.0 && g[0][4] < 0.0);
    let report = grad_check(LossKind::Mem, &case, 1e-5, 1e-6, usize::MAX, 0).unwrap();
    assert!(report.passed);
}

proptest! {
    #[test]
    fn losses_are_translation_invariant(seed in 0u64..10_000, shift in -50.0f64..50.0) {
        let case = random_case(seed, 4);
        let mut moved = case.clone();
        for it in &mut moved.items {
            let k = it.scores.n_classes();
            let logits: Vec<f64> = it.scores.logits().iter().enumerate()
                .map(|(j, z)| z + shift * ((j / k) as f64 + 1.0) / 4.0)
                .collect();
            it.scores = it.scores.with_logits(logits).unwrap();
        }
        for kind in LossKind::ALL {
            let a = evaluate(kind, &case).unwrap();
            let b = evaluate(kind, &moved).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{kind}: {a} vs {b}");
            prop_assert!(a >= 0.0 || kind == LossKind::DkdM);
        }
    }
}
