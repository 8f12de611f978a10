use std::collections::BTreeMap;

use flygm::analysis::{default_caps, downsample_indices, reduce_intensity, similarity_matrix, spectral_order, SimilarityConfig, StateRecording};
use flygm::connectome::FlowClass;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn switches(seq: &[usize]) -> usize {
    seq.windows(2).filter(|w| w[0] != w[1]).count()
}

#[test]
fn two_block_affinity_orders_contiguously() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..10 {
        let mut labels: Vec<usize> = (0..10).map(|i| i / 5).collect();
        labels.shuffle(&mut rng);
        let s = DMatrix::from_fn(10, 10, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.01 });
        let order = spectral_order(&s).unwrap();
        let mut sorted = order.perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        let seq: Vec<usize> = order.perm.iter().map(|&i| labels[i]).collect();
        assert_eq!(switches(&seq), 1, "{seq:?}");
    }
}

#[test]
fn two_block_series_order_with_similarity_blend() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut labels: Vec<usize> = (0..24).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let series: Vec<Vec<f64>> = labels
        .iter()
        .map(|&b| {
            (0..40)
                .map(|t| {
                    let x = t as f64 / 4.0;
                    let base = if b == 0 { x.sin() + 1.0 } else { x.cos() + 1.0 };
                    base + rng.random_range(-0.05..0.05)
                })
                .collect()
        })
        .collect();
    let cfg = SimilarityConfig {
        distance_as_similarity: true,
        ..SimilarityConfig::default()
    };
    let order = spectral_order(&similarity_matrix(&series, &cfg).unwrap()).unwrap();
    let seq: Vec<usize> = order.perm.iter().map(|&i| labels[i]).collect();
    assert_eq!(switches(&seq), 1, "{seq:?}");
}

#[test]
fn identical_series_have_similarity_alpha() {
    let s = similarity_matrix(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]], &SimilarityConfig::default()).unwrap();
    assert_eq!(s[(0, 1)], 0.7);
    assert_eq!(s[(0, 0)], 1.0);
}

#[test]
fn intensity_hits_zero_and_one_at_the_percentiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let (steps, neurons, channels) = (30, 9, 4);
    let data: Vec<f64> = (0..steps * neurons * channels).map(|_| rng.random_range(-3.0..3.0)).collect();
    let rec = StateRecording::new(
        steps,
        neurons,
        channels,
        data,
        vec![FlowClass::Intrinsic; neurons],
        vec!["central".into(); neurons],
    )
    .unwrap();
    let map = reduce_intensity(&rec).unwrap();
    assert!(map.data.iter().all(|v| (0.0..=1.0).contains(v)));
    // Projections at or beyond the clip points land exactly on the bounds.
    let n_low = map.data.iter().filter(|&&v| v == 0.0).count();
    let n_high = map.data.iter().filter(|&&v| v == 1.0).count();
    assert!(n_low >= map.data.len() / 20 && n_high >= map.data.len() / 20, "{n_low} {n_high}");
}

#[test]
fn caps_are_enforced_exactly() {
    let census = [("optic", 2000), ("central", 350), ("motor", 180), ("endocrine", 60), ("unlisted", 33)];
    let labels: Vec<String> = census.iter().flat_map(|&(k, n)| std::iter::repeat_n(k.to_string(), n)).collect();
    let caps = default_caps();
    let keep = downsample_indices(&labels, &caps, 4).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in &keep {
        *counts.entry(labels[i].as_str()).or_default() += 1;
    }
    assert_eq!(counts["optic"], 1500);
    assert_eq!(counts["central"], 350);
    assert_eq!(counts["motor"], 100);
    assert_eq!(counts["endocrine"], 60);
    assert_eq!(counts["unlisted"], 33);
    assert!(keep.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(keep, downsample_indices(&labels, &caps, 4).unwrap());
}
