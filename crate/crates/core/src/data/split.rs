use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// Seeded shuffle followed by contiguous train/dev/test slices.
pub fn split_dataset(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let take = |idx: &[usize], split: Split| {
        Dataset::new(
            format!("{}-{}", ds.name, split.name()),
            Some(split),
            idx.iter().map(|&i| ds.documents[i].clone()).collect(),
        )
    };
    Ok((
        take(&order[..n_train], Split::Train),
        take(&order[n_train..n_train + n_dev], Split::Dev),
        take(&order[n_train + n_dev..], Split::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Document;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Dataset {
        let docs = (0..n)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                sentences: vec![vec!["x".into()]],
                doc_label: (i % 2) as u8,
                token_labels: None,
            })
            .collect();
        Dataset::new("c", None, docs)
    }

    #[test]
    fn sizes_follow_fractions() {
        let (tr, dv, te) = split_dataset(&corpus(100), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (80, 10, 10));
    }

    #[test]
    fn deterministic_partition() {
        let ds = corpus(57);
        let a = split_dataset(&ds, [0.6, 0.2, 0.2], 9).unwrap();
        let b = split_dataset(&ds, [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!(a, b);
        let mut ids = HashSet::new();
        for part in [&a.0, &a.1, &a.2] {
            for d in &part.documents {
                assert!(ids.insert(d.doc_id.clone()));
            }
        }
        assert_eq!(ids.len(), 57);
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_dataset(&corpus(10), [0.5, 0.2, 0.2], 0).is_err());
    }
}
