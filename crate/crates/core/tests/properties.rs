use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use nec_core::corrector::{fuse_scores, Candidate, CandidateSet};
use nec_core::entity_store::{homophone_pairs, occurrence_counts, AnnotatedText, EntityCatalog};
use nec_core::phonetics::{PronunciationLexicon, ToneMode};
use nec_core::semantic::{
    build_memory, infonce_loss, softmax, topk_inner_product, EmbeddingVector, MemoryRow,
};

fn lexicon() -> Arc<PronunciationLexicon> {
    // eight characters over four syllables, so homophones are common
    let mut lex = PronunciationLexicon::new(ToneMode::WithTone);
    for (i, c) in "甲乙丙丁戊己庚辛".chars().enumerate() {
        lex.insert(c, [format!("y{}", i % 4)]).unwrap();
    }
    Arc::new(lex)
}

fn word() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select("甲乙丙丁戊己庚辛".chars().collect::<Vec<_>>()),
        1..4,
    )
    .prop_map(|cs| cs.into_iter().collect())
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 1..40),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn infonce_below_ln_b_when_diagonal_dominates(
        b in 2usize..8,
        diag in 0.0f64..5.0,
        off in prop::collection::vec(-5.0f64..0.0, 64),
    ) {
        // one-hot entities; contexts carry the dot products directly
        let entities: Vec<EmbeddingVector> = (0..b)
            .map(|i| EmbeddingVector::new((0..b).map(|j| f64::from(u8::from(i == j))).collect()).unwrap())
            .collect();
        let contexts: Vec<EmbeddingVector> = (0..b)
            .map(|i| {
                let row = (0..b).map(|j| if i == j { diag } else { off[i * 8 + j].min(diag) }).collect();
                EmbeddingVector::new(row).unwrap()
            })
            .collect();
        let loss = infonce_loss(&contexts, &entities).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(loss <= (b as f64).ln() + 1e-12);
    }

    #[test]
    fn topk_matches_brute_force(
        rows in prop::collection::vec(prop::collection::vec(-4i8..4, 3), 1..200),
        query in prop::collection::vec(-4i8..4, 3),
        k in 1usize..250,
    ) {
        // small integers give exact scores and frequent ties
        let memory = build_memory(3, rows.iter().enumerate().map(|(i, r)| MemoryRow {
            id: i as u32,
            surface: format!("e{i}"),
            vector: r.iter().map(|&v| f32::from(v)).collect(),
        }).collect()).unwrap();
        let q = EmbeddingVector::new(query.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let got = topk_inner_product(&memory, &q, k).unwrap();
        let mut brute: Vec<(u32, i32)> = rows.iter().enumerate()
            .map(|(i, r)| (i as u32, r.iter().zip(&query).map(|(&a, &b)| i32::from(a) * i32::from(b)).sum()))
            .collect();
        brute.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        brute.truncate(k);
        prop_assert_eq!(got.len(), brute.len());
        for (g, w) in got.iter().zip(&brute) {
            prop_assert_eq!(g.0, w.0);
            prop_assert_eq!(g.1, f64::from(w.1));
        }
    }

    #[test]
    fn homophone_pairs_match_brute_force(words in prop::collection::vec(word(), 0..60), seed in any::<u64>()) {
        let lex = lexicon();
        let catalog = EntityCatalog::from_surfaces(&words, Arc::clone(&lex));
        let brute: BTreeSet<(String, String)> = catalog.entities().iter()
            .flat_map(|a| catalog.entities().iter().map(move |b| (a, b)))
            .filter(|(a, b)| a.id < b.id && a.phonetic == b.phonetic)
            .map(|(a, b)| (a.surface.clone(), b.surface.clone()))
            .collect();
        let as_surfaces = |c: &EntityCatalog| -> BTreeSet<(String, String)> {
            homophone_pairs(c).into_iter().map(|(a, b)| {
                let (x, y) = (c.get(a).unwrap().surface.clone(), c.get(b).unwrap().surface.clone());
                (x.clone().min(y.clone()), x.max(y))
            }).collect()
        };
        let normalise = |s: BTreeSet<(String, String)>| -> BTreeSet<(String, String)> {
            s.into_iter().map(|(a, b)| (a.clone().min(b.clone()), a.max(b))).collect()
        };
        prop_assert_eq!(as_surfaces(&catalog), normalise(brute));

        // insertion order does not change the pair set
        let mut shuffled = words.clone();
        let n = shuffled.len().max(1);
        shuffled.rotate_left((seed as usize) % n);
        shuffled.reverse();
        let other = EntityCatalog::from_surfaces(&shuffled, lex);
        prop_assert_eq!(as_surfaces(&catalog), as_surfaces(&other));
    }

    #[test]
    fn fusion_ranking_ignores_positive_rescaling(
        scores in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..12),
        alpha in 0.0f64..=1.0,
        c_phon in 0.1f64..10.0,
        c_sem in 0.1f64..10.0,
    ) {
        let build = |cp: f64, cs: f64| CandidateSet(scores.iter().enumerate().map(|(i, &(p, s))| Candidate {
            id: i as u32,
            surface: format!("e{i}"),
            phonetic_score: p * cp,
            semantic_score: s * cs,
            fused_score: 0.0,
        }).collect());
        let mut base = build(1.0, 1.0);
        let mut scaled = build(c_phon, c_sem);
        fuse_scores(&mut base, alpha);
        fuse_scores(&mut scaled, alpha);
        // the shift is the same for every candidate, so only float noise can reorder near-ties
        let (b0, s0) = (base.best().unwrap(), scaled.best().unwrap());
        if b0.id != s0.id {
            let gap = (b0.fused_score - base.0.iter().find(|c| c.id == s0.id).unwrap().fused_score).abs();
            prop_assert!(gap < 1e-9, "argmax moved with gap {}", gap);
        }
    }

    #[test]
    fn occurrence_counts_match_linear_scan(
        words in prop::collection::vec(word(), 1..20),
        picks in prop::collection::vec((0usize..20, 0usize..3), 0..30),
    ) {
        let catalog = EntityCatalog::from_surfaces(&words, lexicon());
        let utterances: Vec<AnnotatedText> = picks.iter().map(|&(w, pad)| {
            let w = &words[w % words.len()];
            let text = format!("{}{}{}", "甲".repeat(pad), w, "乙");
            AnnotatedText { text, ne_spans: vec![(pad, pad + w.chars().count())] }
        }).collect();
        let counts = occurrence_counts(&utterances, &catalog);
        prop_assert_eq!(counts.len(), catalog.len());
        for e in catalog.entities() {
            let mut n = 0;
            for u in &utterances {
                let chars: Vec<char> = u.text.chars().collect();
                for &(s, t) in &u.ne_spans {
                    if chars[s..t].iter().collect::<String>() == e.surface {
                        n += 1;
                    }
                }
            }
            prop_assert_eq!(counts[&e.id], n);
        }
    }
}
