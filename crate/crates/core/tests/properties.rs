mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use cir_core::embedding::{embed_text, normalize, Embedding, EmbeddingProvider, MockProvider};
use cir_core::evaluation::{ap_at_k, recall_at_k, recall_subset_at_k, QueryRecord};
use cir_core::gateway::{cache_key, parse_response, CacheKeyParts, ReasoningTrace, Stage};
use cir_core::index::{build_gallery, Accumulation, Execution, Gallery, SearchConfig};
use cir_core::prompting::{
    assemble_prompt, default_samples, BenchmarkTask, CotTemplate, ManipulationText,
    ReferenceImage, StepKind, TaskVariant, IMAGE_PLACEHOLDER,
};

use common::{oracle_ap, oracle_mock_vector, oracle_ranking};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| {
        v.iter().map(|x| x * x).sum::<f64>() > 1e-6
    })
}

/// Gallery of 1..=48 entries of dimension 2..=16, some of them duplicated
/// to force score ties, plus a query.
fn gallery_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
    (2usize..=16, 1usize..=48).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec(vector(dim), n),
            prop::collection::vec(any::<prop::sample::Index>(), 0..4),
            vector(dim),
            1usize..=n + 3,
        )
            .prop_map(|(mut rows, dups, q, k)| {
                for d in dups {
                    let copy = rows[d.index(rows.len())].clone();
                    rows.push(copy);
                }
                (rows, q, k)
            })
    })
}

fn build(rows: &[Vec<f64>]) -> Gallery {
    build_gallery(
        rows.iter()
            .enumerate()
            .map(|(i, v)| (format!("c{i:03}"), Embedding::new(v.clone())))
            .collect(),
        "prop",
    )
    .unwrap()
}

const F64: SearchConfig = SearchConfig {
    accumulation: Accumulation::F64,
    execution: Execution::Sequential,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn top_k_matches_full_sort_oracle((rows, q, k) in gallery_case()) {
        let g = build(&rows);
        let got = g.top_k_with(&Embedding::new(q.clone()), k, F64).unwrap();
        let want = oracle_ranking(&g, &q, k);
        prop_assert_eq!(got.ids(), want.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>());
        for (c, (_, s)) in got.ranked.iter().zip(&want) {
            prop_assert!((c.score - s).abs() < 1e-5);
        }
    }

    #[test]
    fn f32_scores_stay_within_tolerance((rows, q, k) in gallery_case()) {
        let g = build(&rows);
        let got = g.top_k(&Embedding::new(q.clone()), k).unwrap();
        let want = oracle_ranking(&g, &q, k);
        prop_assert_eq!(got.ranked.len(), want.len());
        for (c, (_, s)) in got.ranked.iter().zip(&want) {
            prop_assert!((c.score - s).abs() < 1e-5);
        }
    }

    #[test]
    fn ranking_is_sorted_with_id_tie_break((rows, q, k) in gallery_case()) {
        let g = build(&rows);
        let r = g.top_k(&Embedding::new(q), k).unwrap();
        prop_assert!(r.ranked.len() <= k.min(g.len()));
        for w in r.ranked.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
        for c in &r.ranked {
            prop_assert!(c.score >= -1.0 - 1e-6 && c.score <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn prefix_consistency((rows, q, k) in gallery_case(), j in 1usize..8) {
        let g = build(&rows);
        let q = Embedding::new(q);
        let j = j.min(k);
        let long = g.top_k(&q, k).unwrap();
        let short = g.top_k(&q, j).unwrap();
        prop_assert_eq!(&long.ranked[..short.ranked.len()], &short.ranked[..]);
    }

    #[test]
    fn scale_invariance((rows, q, k) in gallery_case(), c in 1e-3f64..1e3, d in 1e-3f64..1e3) {
        let g = build(&rows);
        let base = g.top_k(&Embedding::new(q.clone()), k).unwrap();
        let scaled_q: Vec<f64> = q.iter().map(|x| x * c).collect();
        let scaled = g.top_k(&Embedding::new(scaled_q), k).unwrap();
        prop_assert_eq!(scaled.ids(), base.ids());
        let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * d).collect()).collect();
        let g2 = build(&scaled_rows);
        let r2 = g2.top_k(&Embedding::new(q), k).unwrap();
        let tol = 1e-5;
        prop_assert_eq!(r2.ranked.len(), base.ranked.len());
        for (a, b) in r2.ranked.iter().zip(&base.ranked) {
            prop_assert!((a.score - b.score).abs() < tol);
        }
    }

    #[test]
    fn self_retrieval(rows in (2usize..=16).prop_flat_map(|d| prop::collection::vec(vector(d), 1..32)), pick in any::<prop::sample::Index>()) {
        // Distinct directions only; duplicates would tie at rank 1.
        let g = build(&rows);
        let i = pick.index(rows.len());
        let id = format!("c{i:03}");
        let own: Vec<f64> = g.vector(&id).unwrap().iter().map(|&x| f64::from(x)).collect();
        let r = g.top_k(&Embedding::new(own), 1).unwrap();
        let top = r.top().unwrap();
        prop_assert!((top.score - 1.0).abs() < 1e-6);
        if top.id != id {
            // Only a parallel vector may outrank or tie it.
            let other: Vec<f64> = g.vector(&top.id).unwrap().iter().map(|&x| f64::from(x)).collect();
            let own = g.vector(&id).unwrap();
            let dot: f64 = other.iter().zip(own).map(|(a, &b)| a * f64::from(b)).sum();
            prop_assert!((dot - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn parallel_and_sequential_agree((rows, q, k) in gallery_case()) {
        let g = build(&rows);
        let q = Embedding::new(q);
        let seq = g.top_k_with(&q, k, SearchConfig::sequential()).unwrap();
        let par = g.top_k_with(&q, k, SearchConfig::default()).unwrap();
        prop_assert_eq!(seq, par);
    }

    #[test]
    fn subset_ranking_matches_oracle((rows, q, _k) in gallery_case(), mask in prop::collection::vec(any::<bool>(), 64)) {
        let g = build(&rows);
        let subset: Vec<String> = g.ids().iter().enumerate().filter(|(i, _)| mask[i % 64]).map(|(_, id)| id.clone()).collect();
        let r = g.rank_subset(&Embedding::new(q.clone()), &subset).unwrap();
        let want: Vec<String> = oracle_ranking(&g, &q, g.len())
            .into_iter()
            .map(|(id, _)| id)
            .filter(|id| subset.contains(id))
            .collect();
        prop_assert_eq!(r.ids(), want.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

fn ranking_case() -> impl Strategy<Value = (Vec<String>, BTreeSet<String>, usize)> {
    (1usize..30).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0usize..5, 0..3),
            1usize..40,
        )
            .prop_map(|(n, rel, extra, k)| {
                let ranked: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
                let mut gt: BTreeSet<String> = ranked
                    .iter()
                    .zip(&rel)
                    .filter(|(_, r)| **r)
                    .map(|(id, _)| id.clone())
                    .collect();
                // Ground truth outside the ranking.
                gt.extend(extra.iter().map(|e| format!("missing{e}")));
                if gt.is_empty() {
                    gt.insert("missing".into());
                }
                (ranked, gt, k)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ap_matches_oracle((ranked, gt, k) in ranking_case()) {
        let got = ap_at_k(&ranked, &gt, k).unwrap();
        prop_assert!((got - oracle_ap(&ranked, &gt, k)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn metrics_are_monotone_in_k((ranked, gt, k) in ranking_case()) {
        let r1 = recall_at_k(&ranked, &gt, k).unwrap();
        let r2 = recall_at_k(&ranked, &gt, k + 1).unwrap();
        prop_assert!(r1 <= r2);
        // AP is non-decreasing in k once k reaches |GT|; below that the
        // denominator grows with k.
        if k >= gt.len() {
            prop_assert!(ap_at_k(&ranked, &gt, k).unwrap() <= ap_at_k(&ranked, &gt, k + 1).unwrap() + 1e-12);
        }
    }

    #[test]
    fn promoting_a_relevant_item_never_lowers_ap((ranked, gt, k) in ranking_case(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let (i, j) = (a.index(ranked.len()), b.index(ranked.len()));
        let (early, late) = (i.min(j), i.max(j));
        if !gt.contains(&ranked[early]) && gt.contains(&ranked[late]) {
            let mut swapped = ranked.clone();
            swapped.swap(early, late);
            prop_assert!(ap_at_k(&swapped, &gt, k).unwrap() + 1e-12 >= ap_at_k(&ranked, &gt, k).unwrap());
        }
    }

    #[test]
    fn subset_recall_equals_restricted_recall((rows, q, _k) in gallery_case(), mask in prop::collection::vec(any::<bool>(), 64), pick in any::<prop::sample::Index>(), k in 1usize..5) {
        let g = build(&rows);
        let mut subset: Vec<String> = g.ids().iter().enumerate().filter(|(i, _)| mask[i % 64]).map(|(_, id)| id.clone()).collect();
        let target = g.ids()[pick.index(g.len())].clone();
        if !subset.contains(&target) {
            subset.push(target.clone());
        }
        let record = QueryRecord {
            query_id: "q".into(),
            reference_image_id: "r".into(),
            manipulation_text: "t".into(),
            ground_truth_ids: [target].into_iter().collect(),
            subset_ids: Some(subset.clone()),
            task: BenchmarkTask::Cirr,
            split_tag: String::new(),
        };
        let q = Embedding::new(q);
        let ranking = g.rank_subset(&q, &subset).unwrap();
        let restricted = build_gallery(
            subset.iter().map(|id| {
                let v: Vec<f64> = g.vector(id).unwrap().iter().map(|&x| f64::from(x)).collect();
                (id.clone(), Embedding::new(v))
            }).collect(),
            "restricted",
        ).unwrap();
        let full = restricted.top_k(&q, subset.len()).unwrap();
        prop_assert_eq!(
            recall_subset_at_k(&record, &ranking.ids(), k).unwrap(),
            recall_at_k(&full.ids(), &record.ground_truth_ids, k).unwrap()
        );
    }
}

proptest! {
    #[test]
    fn normalize_properties(v in vector(24), c in 1e-3f64..1e3) {
        let e = Embedding::new(v.clone());
        let n = normalize(&e).unwrap();
        let nn = normalize(&n).unwrap();
        for (a, b) in n.values().iter().zip(nn.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let scaled = normalize(&Embedding::new(v.iter().map(|x| x * c).collect())).unwrap();
        for (a, b) in n.values().iter().zip(scaled.values()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!((n.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mock_provider_matches_rederivation(text in "\\PC{1,40}", dim in 1usize..80) {
        let provider = MockProvider::new("mock", dim);
        let got = provider.embed_text(&text).unwrap();
        let want = oracle_mock_vector(&text, dim);
        prop_assert_eq!(got.values(), want.as_slice());
    }

    #[test]
    fn provider_output_has_provider_dim(texts in prop::collection::vec("[a-z ]{1,30}", 100), dim in 1usize..128) {
        let provider = MockProvider::new("mock", dim);
        for t in texts.iter().filter(|t| !t.trim().is_empty()) {
            prop_assert_eq!(embed_text(&provider, t).unwrap().dim(), dim);
        }
    }

    #[test]
    fn prompt_sections_are_ordered_and_deterministic(
        text in "[a-zA-Z][a-zA-Z ,.]{0,60}",
        bytes in prop::collection::vec(any::<u8>(), 1..64),
        id in "[a-z][a-z0-9_]{3,12}",
    ) {
        let template = CotTemplate::default_template();
        let image = ReferenceImage::from_bytes(id.clone(), bytes, "image/png");
        let m = ManipulationText::new(&text).unwrap();
        let samples = default_samples();
        let a = assemble_prompt(&template, &samples, &image, &m, &TaskVariant::general()).unwrap();
        let b = assemble_prompt(&template, &samples, &image, &m, &TaskVariant::general()).unwrap();
        let s = a.serialize();
        prop_assert_eq!(&s, &b.serialize());

        let template_at = s.find(StepKind::OriginalImageDescription.header()).unwrap();
        let icl_at = s.find(&samples[0].manipulation_text).unwrap();
        let image_at = s.rfind("Original Image Context:").unwrap();
        let manip_at = s.rfind("Manipulation text:").unwrap();
        prop_assert!(template_at < icl_at && icl_at < image_at && image_at < manip_at);

        // The example section carries only the placeholder.
        let examples = &a.system_text[a.system_text.find("Example 1").unwrap()..];
        prop_assert!(!examples.contains(&id));
        prop_assert!(!examples.contains(&a.image.base64_data));
        prop_assert!(!examples.contains(&a.image.digest));
        prop_assert_eq!(examples.matches(IMAGE_PLACEHOLDER).count(), samples.len());
    }

    #[test]
    fn canonical_json_reparses_to_same_trace(
        fields in prop::collection::vec("\\PC{0,40}", 3),
        target in "[a-zA-Z]\\PC{0,40}",
    ) {
        let target = target.trim().to_string();
        prop_assume!(!target.is_empty());
        let trace = ReasoningTrace {
            original_image_description: fields[0].clone(),
            thoughts: fields[1].clone(),
            reflections: fields[2].clone(),
            target_image_description: target,
            raw_response: String::new(),
            backend_name: String::new(),
        };
        let json = trace.to_canonical_json();
        let back = parse_response(&json).unwrap();
        prop_assert_eq!(back.fields(), trace.fields());
    }

    #[test]
    fn cache_key_changes_with_every_ingredient(
        which in 0usize..5,
        pos in any::<prop::sample::Index>(),
    ) {
        let template = "template digest".to_string();
        let image = "image digest".to_string();
        let text = "make the dog larger".to_string();
        let backend = "backend".to_string();
        let base = CacheKeyParts {
            backend_name: &backend,
            temperature: 0.0,
            stage: Stage::OneStage,
            template_digest: &template,
            icl_digest: "icl",
            image_digest: &image,
            manipulation_text: &text,
            extra: None,
        };
        let flip = |s: &str| {
            let mut b = s.as_bytes().to_vec();
            let i = pos.index(b.len());
            b[i] ^= 1;
            String::from_utf8(b).unwrap()
        };
        let (t2, i2, m2, b2) = (flip(&template), flip(&image), flip(&text), flip(&backend));
        let mut changed = CacheKeyParts { ..base };
        match which {
            0 => changed.template_digest = &t2,
            1 => changed.image_digest = &i2,
            2 => changed.manipulation_text = &m2,
            3 => changed.backend_name = &b2,
            _ => changed.temperature = 0.5,
        }
        prop_assert_ne!(cache_key(&base), cache_key(&changed));
    }
}
