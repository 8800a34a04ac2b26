mod common;

use std::collections::BTreeSet;

use clid_core::corpus::{filter_block, CorpusSnapshot};
use clid_core::embedding::{rerank, EvidenceItem};
use clid_core::estimation::{cochran_sample_size, proportion_ci_with, IntervalMethod};
use clid_core::evaluation::{
    compute_auroc, f1_at, roc_curve, select_threshold, threshold_grid, trapezoid_auc, RocMode,
};
use clid_core::llm::Llm;
use proptest::prelude::*;

/// Pairwise concordance: P(score_pos > score_neg) + 0.5 P(tie).
fn brute_auroc(scores: &[f64], golds: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &p) in scores.iter().enumerate().filter(|(i, _)| golds[*i]) {
        let _ = i;
        for (_, &q) in scores.iter().enumerate().filter(|(j, _)| !golds[*j]) {
            den += 1.0;
            num += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..50)
        .prop_flat_map(|n| (prop::collection::vec(0u8..=10, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, g)| g.iter().any(|&x| x) && g.iter().any(|&x| !x))
        .prop_map(|(s, g)| (s.into_iter().map(|v| v as f64 / 10.0).collect(), g))
}

proptest! {
    #[test]
    fn auroc_matches_concordance_and_trapezoid((scores, golds) in labeled_scores()) {
        let a = compute_auroc(&scores, &golds).unwrap();
        prop_assert!((a - brute_auroc(&scores, &golds)).abs() < 1e-9);
        let roc = roc_curve(&scores, &golds, RocMode::ScoreThreshold).unwrap();
        prop_assert!((a - trapezoid_auc(&roc)).abs() < 1e-9);
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        prop_assert_eq!((roc[roc.len() - 1].fpr, roc[roc.len() - 1].tpr), (1.0, 1.0));
    }

    #[test]
    fn auroc_invariant_under_monotone_maps((scores, golds) in labeled_scores()) {
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = compute_auroc(&scores, &golds).unwrap();
        prop_assert!((a - compute_auroc(&mapped, &golds).unwrap()).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((1.0 - a - compute_auroc(&flipped, &golds).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn selected_threshold_is_f1_optimal((scores, golds) in labeled_scores()) {
        let t = select_threshold(&scores, &golds).unwrap();
        let best = f1_at(&scores, &golds, t);
        for c in threshold_grid(&scores) {
            prop_assert!(best >= f1_at(&scores, &golds, c));
            if f1_at(&scores, &golds, c) == best {
                prop_assert!(t <= c);
            }
        }
    }

    #[test]
    fn rerank_returns_a_permutation(n in 1usize..8, order in prop::collection::vec(1usize..10, 0..10), garbage in any::<bool>()) {
        let blocks: Vec<_> = (0..n).map(|i| common::block(&format!("b{i}"), &format!("T{i}"), &format!("passage number {i}"))).collect();
        let snapshot = CorpusSnapshot::from_blocks(common::date(), blocks).unwrap();
        let items: Vec<EvidenceItem> = (0..n)
            .map(|i| EvidenceItem { block_id: format!("b{i}"), similarity: 1.0 - i as f64 / 10.0, rank: i + 1, rerank_rank: None })
            .collect();
        let reply = if garbage {
            "no idea".to_string()
        } else {
            let r: Vec<String> = order.iter().map(|i| format!("[{i}]")).collect();
            format!("<ranking>{}</ranking>", r.join(" > "))
        };
        let llm = Llm::new(std::sync::Arc::new(common::scripted(&[("rerank", &[reply.as_str()])])));
        let out = rerank("query", &items, &snapshot, &llm).unwrap();
        let before: BTreeSet<&str> = items.iter().map(|e| e.block_id.as_str()).collect();
        let after: BTreeSet<&str> = out.items.iter().map(|e| e.block_id.as_str()).collect();
        prop_assert_eq!(out.items.len(), n);
        prop_assert_eq!(before, after);
        if out.degraded {
            prop_assert_eq!(&out.items.iter().map(|e| &e.block_id).collect::<Vec<_>>(), &items.iter().map(|e| &e.block_id).collect::<Vec<_>>());
        }
    }

    #[test]
    fn snapshot_round_trips(texts in prop::collection::vec("[a-zA-Zé中 \\n\"\\\\]{1,40}", 1..12)) {
        if texts.iter().any(|t| t.trim().is_empty()) {
            let blocks = vec![common::block("x", "Doc", " \n ")];
            prop_assert!(CorpusSnapshot::from_blocks(common::date(), blocks).is_err());
            return Ok(());
        }
        let blocks: Vec<_> = texts.iter().enumerate().map(|(i, t)| common::block(&format!("id{i}"), &format!("Doc {}", i % 3), t)).collect();
        let snap = CorpusSnapshot::from_blocks(common::date(), blocks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        snap.save(&path).unwrap();
        let back = CorpusSnapshot::load(&path).unwrap();
        prop_assert_eq!(back.blocks(), snap.blocks());
        prop_assert_eq!(back.content_hash(), snap.content_hash());
    }

    #[test]
    fn filter_agrees_with_char_count(text in "\\PC{0,40}", lo in 0usize..30, span in 0usize..20) {
        let hi = lo + span;
        let n = text.chars().count();
        prop_assert_eq!(filter_block(&text, lo, hi), n > 0 && lo <= n && n <= hi);
    }

    #[test]
    fn intervals_bracket_the_estimate(n in 1u64..2000, frac in 0.0f64..=1.0, conf in 0.5f64..0.999, wilson in any::<bool>()) {
        let s = (frac * n as f64).floor() as u64;
        let method = if wilson { IntervalMethod::Wilson } else { IntervalMethod::Wald };
        let e = proportion_ci_with(s, n, conf, method).unwrap();
        prop_assert!(0.0 <= e.interval.0 && e.interval.0 <= e.p_hat + 1e-12);
        prop_assert!(e.p_hat <= e.interval.1 + 1e-12 && e.interval.1 <= 1.0);
    }

    #[test]
    fn cochran_shrinks_as_margin_grows(m in 0.005f64..0.3, z in 1.0f64..3.5) {
        let small = cochran_sample_size(z, 0.5, m).unwrap();
        let large = cochran_sample_size(z, 0.5, m * 1.5).unwrap();
        prop_assert!(large <= small);
    }
}
