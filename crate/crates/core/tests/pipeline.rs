use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nec_core::corrector::{
    correct_batch, correct_utterance, ContextEncoder, CorrectorConfig, SemanticModel,
};
use nec_core::entity_store::{homophone_pairs, EntityCatalog};
use nec_core::phonetics::{load_lexicon, PronunciationLexicon, ToneMode};
use nec_core::records::{Hypothesis, NBestRecord};
use nec_core::semantic::build_reference_memory;
use nec_core::synthetic::{generate, SyntheticConfig};

fn record(id: &str, hyps: &[(&str, f64)], ced: Vec<(usize, usize)>) -> NBestRecord {
    NBestRecord {
        utt_id: id.into(),
        nbest: hyps
            .iter()
            .map(|(t, s)| Hypothesis {
                text: (*t).into(),
                score: *s,
            })
            .collect(),
        reference: None,
        ne_spans: None,
        ced_spans: Some(ced),
    }
}

#[test]
fn corrupted_name_is_restored_from_context() {
    let lex = load_lexicon(
        "朴\tpiao2\n泰\ttai4\n桓\thuan2\n環\thuan2\n而\ter2\n在\tzai4\n".as_bytes(),
        ToneMode::WithTone,
    )
    .unwrap();
    // the homophone distractor comes first, so it wins every tie without context
    let mut catalog = EntityCatalog::from_surfaces(["朴泰環", "朴泰桓"], Arc::new(lex));
    catalog
        .attach_description("朴泰環", "台灣作家，著有多部小說與散文")
        .unwrap();
    catalog
        .attach_description("朴泰桓", "韓國男子游泳選手，多次在日本參加國際比賽")
        .unwrap();
    let rec = record(
        "run",
        &[
            ("韓國媒體報導稱而在桓確實人在日本", -1.0),
            ("韓國媒體報導稱朴泰桓確實人在日本", -1.1),
            ("韓國媒體報導稱朴泰環確實人在日本", -1.2),
        ],
        vec![(7, 10)],
    );
    let memory = build_reference_memory(&catalog, 1024, 3).unwrap();
    let encoder = ContextEncoder::Reference { dim: 1024, seed: 3 };
    let model = SemanticModel {
        memory: &memory,
        encoder: &encoder,
    };
    let config = CorrectorConfig::default();

    let out = correct_utterance(&rec, &catalog, Some(model), &config).unwrap();
    assert_eq!(out.corrected, "韓國媒體報導稱朴泰桓確實人在日本");
    assert!(!out.results[0].rejected);

    let phonetic = CorrectorConfig {
        alpha: 1.0,
        ..Default::default()
    };
    let out = correct_utterance(&rec, &catalog, None, &phonetic).unwrap();
    assert_eq!(out.corrected, "韓國媒體報導稱朴泰環確實人在日本");
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let corpus = generate(&SyntheticConfig {
        utterances: 120,
        ..Default::default()
    });
    let catalog = corpus.catalog();
    let memory = build_reference_memory(&catalog, 256, 9).unwrap();
    let encoder = ContextEncoder::Reference { dim: 256, seed: 9 };
    let model = SemanticModel {
        memory: &memory,
        encoder: &encoder,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            correct_batch(
                &corpus.records,
                &catalog,
                Some(model),
                &CorrectorConfig::default(),
            )
            .unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(8));
    assert_eq!(one, run(3));
}

fn random_catalog(rng: &mut ChaCha8Rng) -> (EntityCatalog, Vec<char>) {
    let mut lex = PronunciationLexicon::new(ToneMode::WithTone);
    let chars: Vec<char> = (0..24)
        .map(|i| char::from_u32(0x4E00 + i).unwrap())
        .collect();
    for &c in &chars {
        lex.insert(c, [format!("y{}", rng.gen_range(0..10))])
            .unwrap();
    }
    let lex = Arc::new(lex);
    let mut catalog = EntityCatalog::new(Arc::clone(&lex));
    for _ in 0..rng.gen_range(1..30) {
        let n = rng.gen_range(1..=4);
        let w: String = (0..n).map(|_| *chars.choose(rng).unwrap()).collect();
        catalog.push(&w);
    }
    (catalog, chars)
}

#[test]
fn correct_entity_with_agreeing_nbest_is_kept() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..500 {
        let (catalog, chars) = random_catalog(&mut rng);
        let lex = catalog.lexicon();
        let entity = catalog.entities().choose(&mut rng).unwrap().clone();
        let filler = |rng: &mut ChaCha8Rng| -> String {
            (0..rng.gen_range(0..4))
                .map(|_| *chars.choose(rng).unwrap())
                .collect()
        };
        let (pre, suf) = (filler(&mut rng), filler(&mut rng));
        let start = pre.chars().count();
        let end = start + entity.surface.chars().count();
        // every hypothesis carries the entity or a same-sounding spelling of it
        let mut hyps = vec![(format!("{pre}{}{suf}", entity.surface), 0.0)];
        for n in 1..rng.gen_range(1..6) {
            let spelled: String = entity
                .surface
                .chars()
                .map(|c| {
                    let same: Vec<char> = chars
                        .iter()
                        .copied()
                        .filter(|&o| lex.syllable(o) == lex.syllable(c))
                        .collect();
                    *same.choose(&mut rng).unwrap()
                })
                .collect();
            hyps.push((format!("{pre}{spelled}{suf}"), -(n as f64)));
        }
        let hyp_refs: Vec<(&str, f64)> = hyps.iter().map(|(t, s)| (t.as_str(), *s)).collect();
        let rec = record("p", &hyp_refs, vec![(start, end)]);
        let alpha = [0.0, 0.6, 1.0][trial % 3];
        let config = CorrectorConfig {
            alpha,
            ..Default::default()
        };
        let out = correct_utterance(&rec, &catalog, None, &config).unwrap();
        let top1 = &hyps[0].0;
        if out.corrected == *top1 {
            continue;
        }
        // equality accepts, so only a homophone sibling may replace the entity
        let siblings: Vec<String> = homophone_pairs(&catalog)
            .into_iter()
            .filter_map(|(a, b)| {
                if a == entity.id {
                    Some(b)
                } else if b == entity.id {
                    Some(a)
                } else {
                    None
                }
            })
            .map(|id| catalog.get(id).unwrap().surface.clone())
            .collect();
        assert!(
            siblings
                .iter()
                .any(|s| out.corrected == format!("{pre}{s}{suf}")),
            "trial {trial}: {top1:?} became {:?}",
            out.corrected
        );
        assert_eq!(out.results[0].reject_score_original, 0.0);
    }
}

#[test]
fn no_spans_and_empty_catalog_are_no_ops() {
    let corpus = generate(&SyntheticConfig {
        utterances: 5,
        ..Default::default()
    });
    let catalog = corpus.catalog();
    let mut rec = corpus.records[0].clone();
    rec.ced_spans = Some(vec![]);
    let out = correct_utterance(&rec, &catalog, None, &CorrectorConfig::default()).unwrap();
    assert_eq!(out.corrected, rec.top1());
    assert!(out.results.is_empty());

    let empty = EntityCatalog::new(Arc::clone(&corpus.lexicon));
    let out = correct_utterance(
        &corpus.records[1],
        &empty,
        None,
        &CorrectorConfig::default(),
    )
    .unwrap();
    assert_eq!(out.corrected, corpus.records[1].top1());
}

#[test]
fn rejection_off_always_substitutes() {
    let corpus = generate(&SyntheticConfig {
        utterances: 60,
        ..Default::default()
    });
    let catalog = corpus.catalog();
    let config = CorrectorConfig {
        rejection: false,
        ..Default::default()
    };
    for u in correct_batch(&corpus.records, &catalog, None, &config).unwrap() {
        for r in &u.results {
            assert!(!r.rejected);
            assert_eq!(
                r.corrected_text,
                catalog.get(r.chosen.unwrap()).unwrap().surface
            );
        }
    }
}
