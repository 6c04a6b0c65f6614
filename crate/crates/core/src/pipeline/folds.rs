//! Cross-validation folds and same-organ pair schedules.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;

const FOLDS: usize = 5;
const MIN_PATIENTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: Vec<Fold>,
    /// Patients that are tested in more than one fold.
    pub repeated_test_patients: Vec<String>,
}

impl FoldSpec {
    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn fold(&self, k: usize) -> Result<&Fold, PipelineError> {
        self.folds.get(k).ok_or_else(|| {
            PipelineError::Validation(format!("fold {k} out of range 0..{}", self.folds.len()))
        })
    }
}

/// Five folds over a seeded shuffle. Test blocks of `ceil(N/5)` patients
/// are taken consecutively (wrapping, so every patient is tested at least
/// once), validation takes the next `round(3N/34)` patients and training
/// the rest.
pub fn make_folds(patient_ids: &[String], seed: u64) -> Result<FoldSpec, PipelineError> {
    let n = patient_ids.len();
    if n < MIN_PATIENTS {
        return Err(PipelineError::TooFewPatients(n));
    }
    let mut ids = patient_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = n.div_ceil(FOLDS);
    let val = ((n * 3) as f64 / 34.0).round().max(1.0) as usize;
    let folds = (0..FOLDS)
        .map(|f| {
            let start = f * test;
            let at = |k: usize| ids[k % n].clone();
            let test_ids: Vec<String> = (start..start + test).map(at).collect();
            let val_ids: Vec<String> = (start + test..start + test + val).map(at).collect();
            let train_ids = (start + test + val..start + n).map(at).collect();
            Fold {
                train: train_ids,
                val: val_ids,
                test: test_ids,
            }
        })
        .collect();
    let repeated = ids[..(FOLDS * test).saturating_sub(n)].to_vec();
    Ok(FoldSpec {
        folds,
        repeated_test_patients: repeated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// All ordered pairs including self-pairs, shuffled by `seed + epoch`.
    Train { epoch: u64 },
    /// All ordered pairs including self-pairs, in order.
    Validation,
    /// Ordered pairs without self-pairs, in order.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub a: String,
    pub b: String,
    pub organ: String,
}

impl Pair {
    pub fn id(&self) -> String {
        pair_id(&self.a, &self.b, &self.organ)
    }
}

pub fn pair_id(a: &str, b: &str, organ: &str) -> String {
    format!("{a}__{b}__{organ}")
}

/// Same-organ ordered patient pairs for one phase.
pub fn pair_scheduler(
    patients: &[String],
    organs: &[String],
    phase: Phase,
    seed: u64,
) -> Vec<Pair> {
    let self_pairs = !matches!(phase, Phase::Eval);
    let mut pairs = Vec::new();
    for organ in organs {
        for a in patients {
            for b in patients {
                if a != b || self_pairs {
                    pairs.push(Pair {
                        a: a.clone(),
                        b: b.clone(),
                        organ: organ.clone(),
                    });
                }
            }
        }
    }
    if let Phase::Train { epoch } = phase {
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch)));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("p{k:02}")).collect()
    }

    #[test]
    fn thirty_four_patients() {
        let spec = make_folds(&ids(34), 7).unwrap();
        assert_eq!(spec.folds.len(), 5);
        for f in &spec.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (24, 3, 7));
            let all: BTreeSet<_> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            assert_eq!(all.len(), 34);
        }
        let tested: BTreeSet<_> = spec.folds.iter().flat_map(|f| &f.test).collect();
        assert_eq!(tested.len(), 34);
        assert_eq!(spec.repeated_test_patients.len(), 1);
        assert_eq!(spec, make_folds(&ids(34), 7).unwrap());
        assert_ne!(spec, make_folds(&ids(34), 8).unwrap());
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(
            make_folds(&ids(9), 0),
            Err(PipelineError::TooFewPatients(9))
        ));
        let spec = make_folds(&ids(10), 0).unwrap();
        let f = &spec.folds[0];
        assert_eq!((f.train.len(), f.val.len(), f.test.len()), (7, 1, 2));
        assert!(spec.repeated_test_patients.is_empty());
    }

    #[test]
    fn pair_counts() {
        let organs: Vec<String> = (0..7).map(|k| format!("o{k}")).collect();
        assert_eq!(
            pair_scheduler(&ids(24), &organs, Phase::Train { epoch: 0 }, 1).len(),
            4032
        );
        assert_eq!(
            pair_scheduler(&ids(3), &organs, Phase::Validation, 1).len(),
            63
        );
        assert_eq!(pair_scheduler(&ids(7), &organs, Phase::Eval, 1).len(), 294);
        assert!(pair_scheduler(&ids(1), &organs, Phase::Eval, 1).is_empty());
    }

    #[test]
    fn training_order_depends_on_epoch_only_through_the_seed() {
        let organs = vec!["o".to_owned()];
        let e0 = pair_scheduler(&ids(5), &organs, Phase::Train { epoch: 0 }, 10);
        let e1 = pair_scheduler(&ids(5), &organs, Phase::Train { epoch: 1 }, 10);
        let s11 = pair_scheduler(&ids(5), &organs, Phase::Train { epoch: 0 }, 11);
        assert_ne!(e0, e1);
        assert_eq!(e1, s11);
        let mut sorted = e0.clone();
        sorted.sort();
        let mut plain = pair_scheduler(&ids(5), &organs, Phase::Validation, 0);
        plain.sort();
        assert_eq!(sorted, plain);
    }
}
