use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{ManifestEntry, SynthKind, SynthParams};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = l2_norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn record(id: &str, item: &str, vector: Vec<f64>) -> EmbeddingRecord {
    EmbeddingRecord { image_id: id.into(), item_id: item.into(), domain: Domain::Shop, split: Split::Gallery, vector }
}

fn random_gallery(rng: &mut ChaCha8Rng, size: usize, d: usize, items: usize) -> Gallery {
    Gallery::new(
        (0..size).map(|i| record(&format!("g{i}"), &format!("it{}", rng.gen_range(0..items)), unit(rng, d))).collect(),
    )
    .unwrap()
}

fn oracle(g: &Gallery, q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = g
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.vector.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|p| p.1).collect()
}

#[test]
fn gallery_validation() {
    assert!(Gallery::new(vec![record("a", "x", vec![1.0, 0.0]), record("a", "y", vec![0.0, 1.0])]).is_err());
    assert!(matches!(Gallery::new(vec![record("a", "x", vec![1.0, 1.0])]), Err(Error::Data(_))));
    assert!(Gallery::new(vec![record("a", "x", vec![0.0, 0.0])]).is_ok());
    assert!(matches!(
        Gallery::new(vec![record("a", "x", vec![1.0, 0.0]), record("b", "y", vec![1.0])]),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn exact_match_ranks_first_and_full_k_is_a_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_gallery(&mut rng, 30, 8, 10);
    let q = g.records()[17].vector.clone();
    let nn = knn_query(&g, &q, 30).unwrap();
    assert_eq!(nn[0].index, 17);
    assert_eq!(nn[0].distance, 0.0);
    let mut ids: Vec<usize> = nn.iter().map(|n| n.index).collect();
    ids.sort();
    assert_eq!(ids, (0..30).collect::<Vec<_>>());
    assert!(matches!(knn_query(&g, &q, 0), Err(Error::Config(_))));
    assert!(matches!(knn_query(&g, &q, 31), Err(Error::Config(_))));
    assert!(matches!(knn_query(&g, &q[..4], 3), Err(Error::Dimension(_))));
    assert!(matches!(knn_query(&Gallery::new(vec![]).unwrap(), &q, 1), Err(Error::Config(_))));
}

#[test]
fn knn_matches_exhaustive_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_gallery(&mut rng, 500, 16, 100);
    for _ in 0..20 {
        let q = unit(&mut rng, 16);
        let got: Vec<usize> = knn_query(&g, &q, 20).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(got, oracle(&g, &q, 20));
    }
}

#[test]
fn ties_keep_gallery_order() {
    let e = |i: usize| {
        let mut v = vec![0.0; 3];
        v[i] = 1.0;
        v
    };
    // Records 1, 2 and 4 are duplicates; record 3 is orthogonal to the query.
    let g = Gallery::new(vec![
        record("a", "x", e(0)),
        record("b", "x", e(1)),
        record("c", "y", e(1)),
        record("d", "z", e(2)),
        record("e", "w", e(1)),
    ])
    .unwrap();
    let nn = knn_query(&g, &e(1), 4).unwrap();
    let ids: Vec<&str> = nn.iter().map(|n| n.image_id.as_str()).collect();
    assert_eq!(ids, ["b", "c", "e", "a"]);
}

#[test]
fn euclidean_ranking_equals_dot_product_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let g = random_gallery(&mut rng, 100, 12, 50);
        let q = unit(&mut rng, 12);
        let by_dist: Vec<usize> = knn_query(&g, &q, 100).unwrap().iter().map(|n| n.index).collect();
        let mut by_dot: Vec<(f64, usize)> = g
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.vector.iter().zip(&q).map(|(a, b)| a * b).sum(), i))
            .collect();
        by_dot.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        assert_eq!(by_dist, by_dot.into_iter().map(|p| p.1).collect::<Vec<_>>());
    }
}

#[test]
fn duplicates_give_perfect_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_gallery(&mut rng, 40, 8, 40);
    let queries: Vec<EmbeddingRecord> = g
        .records()
        .iter()
        .map(|r| EmbeddingRecord { image_id: format!("q_{}", r.image_id), split: Split::Query, ..r.clone() })
        .collect();
    for k in [1, 5, 40] {
        assert_eq!(topk_retrieval_accuracy(&queries, &g, k).unwrap().accuracy, 1.0);
    }
}

#[test]
fn random_embeddings_hit_at_chance() {
    // G items with one gallery image each: top-1 accuracy has mean 1/G.
    let (items, queries, seeds) = (10, 20, 200);
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let g =
            Gallery::new((0..items).map(|i| record(&format!("g{i}"), &format!("it{i}"), unit(&mut rng, 8))).collect())
                .unwrap();
        let qs: Vec<EmbeddingRecord> =
            (0..queries).map(|j| record(&format!("q{j}"), &format!("it{}", j % items), unit(&mut rng, 8))).collect();
        total += topk_retrieval_accuracy(&qs, &g, 1).unwrap().accuracy;
    }
    let mean = total / seeds as f64;
    let p = 1.0 / items as f64;
    let sigma = (p * (1.0 - p) / (queries * seeds) as f64).sqrt();
    assert!((mean - p).abs() <= 3.0 * sigma, "mean {mean}, expected {p} ± {}", 3.0 * sigma);
}

#[test]
fn hand_placed_fixture() {
    // Gallery: 20 records on 4 axes in 4-d, 5 per item; each item owns one
    // axis direction, arranged so hits can be counted by hand.
    let axis = |i: usize, s: f64| {
        let mut v = vec![0.0; 4];
        v[i] = s;
        v
    };
    let mut gallery = Vec::new();
    for item in 0..4 {
        for j in 0..5 {
            gallery.push(record(&format!("g{item}_{j}"), &format!("it{item}"), axis(item, 1.0)));
        }
    }
    let g = Gallery::new(gallery).unwrap();
    let q = |id: &str, item: &str, v: Vec<f64>| record(id, item, v);
    let queries = vec![
        q("q0", "it0", axis(0, 1.0)),  // hit at any k
        q("q1", "it1", axis(0, 1.0)),  // it0 fills the first 5 slots
        q("q2", "it2", axis(2, 1.0)),  // hit
        q("q3", "it9", axis(3, 1.0)),  // item absent: miss, reported
        q("q4", "it3", axis(1, -1.0)), // it1 is farthest; ties among it0, it2, it3 in gallery order
    ];
    let r1 = topk_retrieval_accuracy(&queries, &g, 1).unwrap();
    assert_eq!((r1.hits, r1.queries), (2, 5));
    assert_eq!(r1.absent_items, vec!["q3".to_string()]);
    let r5 = topk_retrieval_accuracy(&queries, &g, 5).unwrap();
    assert_eq!(r5.hits, 2);
    // q1: it1 follows the five it0 records at distance 2.
    let r10 = topk_retrieval_accuracy(&queries, &g, 10).unwrap();
    assert_eq!(r10.hits, 3);
    // q4: it0, it2 and it3 sit at distance 2 in gallery order, it1 at 4.
    let r14 = topk_retrieval_accuracy(&queries, &g, 14).unwrap();
    assert_eq!(r14.hits, 4);
    let r20 = topk_retrieval_accuracy(&queries, &g, 20).unwrap();
    assert_eq!(r20.hits, 4);
    assert_eq!(r20.accuracy, 0.8);
}

#[test]
fn accuracy_is_monotone_in_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_gallery(&mut rng, 60, 6, 15);
    let qs: Vec<EmbeddingRecord> =
        (0..30).map(|j| record(&format!("q{j}"), &format!("it{}", j % 15), unit(&mut rng, 6))).collect();
    let mut prev = 0.0;
    for k in 1..=60 {
        let a = topk_retrieval_accuracy(&qs, &g, k).unwrap().accuracy;
        assert!(a >= prev);
        prev = a;
    }
    assert_eq!(prev, 1.0);
}

#[test]
fn store_round_trip_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut recs = random_gallery(&mut rng, 5, 4, 3).into_records();
    recs[1].domain = Domain::Consumer;
    recs[2].split = Split::Query;
    let mut buf = Vec::new();
    write_store(&mut buf, &recs).unwrap();
    assert_eq!(&buf[..4], b"CBPE");
    assert_eq!(read_store(&mut buf.as_slice()).unwrap(), recs);
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_store(&mut bad.as_slice()), Err(Error::Format(_))));
    assert!(matches!(read_store(&mut &buf[..buf.len() - 3]), Err(Error::Format(_))));
    let mut report = Vec::new();
    let g = Gallery::new(recs.clone()).unwrap();
    write_report_jsonl(&mut report, &topk_retrieval_accuracy(&recs, &g, 2).unwrap()).unwrap();
    let lines: Vec<serde_json::Value> =
        String::from_utf8(report).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["hit"], true);
    assert_eq!(lines[0]["top_ids"].as_array().unwrap().len(), 2);
}

#[test]
fn embeddings_are_unit_and_deterministic() {
    let spec = NetworkSpec::desk_extractor(16, [4, 4, 6], 32, 1);
    let state = NetworkState::init(&spec, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = Tensor::new(vec![16, 16, 3], (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let a = embed_image(&spec, &state, &img).unwrap();
    assert_eq!(a.len(), 32);
    assert!((l2_norm(&a) - 1.0).abs() <= 1e-9);
    assert_eq!(a, embed_image(&spec, &state, &img).unwrap());
    let wrong = Tensor::zeros(vec![8, 8, 3]).unwrap();
    assert!(matches!(embed_image(&spec, &state, &wrong), Err(Error::Dimension(_))));
}

#[test]
fn cross_domain_with_duplicated_consumer_images() {
    let params = SynthParams { count: 4, views: 2, consumer_views: 2, image_size: 16, ..SynthParams::default() };
    let data = crate::data::synthesize(SynthKind::CrossDomain, &params, 3).unwrap();
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut images = Vec::new();
    for (e, img) in &data {
        entries.push(e.clone());
        images.push(img.scale(1.0 / 255.0));
        if e.domain == Domain::Consumer {
            entries.push(ManifestEntry { image_id: format!("{}_dup", e.image_id), domain: Domain::Shop, ..e.clone() });
            images.push(img.scale(1.0 / 255.0));
        }
    }
    let m = Manifest::new(entries, 50).unwrap();
    let spec = NetworkSpec::desk_extractor(16, [4, 4, 6], 32, 1);
    let state = NetworkState::init(&spec, 0).unwrap();
    let r = cross_domain_eval(&m, &images, &spec, &state, 1).unwrap();
    assert_eq!(r.queries, 8);
    assert_eq!(r.accuracy, 1.0);
    let shop_only = m.filter(|e| e.domain == Domain::Shop);
    let shop_images: Vec<Tensor> =
        m.entries().iter().zip(&images).filter(|(e, _)| e.domain == Domain::Shop).map(|(_, t)| t.clone()).collect();
    assert!(matches!(cross_domain_eval(&shop_only, &shop_images, &spec, &state, 1), Err(Error::Data(_))));
}
