use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the splitter needs to know about a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingInfo {
    pub id: String,
    pub speakers: Vec<String>,
    /// Duration in frames, used to balance folds.
    pub frames: usize,
}

/// Speaker-disjoint folds of recording ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSplit {
    pub folds: Vec<Vec<String>>,
}

impl SessionSplit {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Index of the fold holding `id`.
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|r| r == id))
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups recordings that share a speaker, shuffles the groups with `seed`,
/// then assigns them longest-first to the currently lightest fold.
pub fn split_sessions(recordings: &[RecordingInfo], k: usize, seed: u64) -> Result<SessionSplit> {
    if k == 0 {
        return Err(Error::InvalidConfig("number of folds must be positive".into()));
    }
    let mut parent: Vec<usize> = (0..recordings.len()).collect();
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (i, r) in recordings.iter().enumerate() {
        for s in &r.speakers {
            match owner.get(s.as_str()) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => {
                    owner.insert(s, i);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..recordings.len() {
        let root = find(&mut parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    if groups.len() < k {
        return Err(Error::TooFewGroups {
            groups: groups.len(),
            folds: k,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let duration = |g: &Vec<usize>| g.iter().map(|&i| recordings[i].frames).sum::<usize>();
    groups.sort_by_key(|g| std::cmp::Reverse(duration(g)));

    let mut load = vec![(0usize, 0usize); k];
    let mut folds: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    for g in &groups {
        let target = (0..k).min_by_key(|&f| (load[f], f)).unwrap_or(0);
        load[target].0 += duration(g);
        load[target].1 += g.len();
        folds[target].extend(g.iter().map(|&i| recordings[i].id.clone()));
    }
    Ok(SessionSplit {
        folds: folds.into_iter().map(|f| f.into_iter().collect()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, speakers: &[&str], frames: usize) -> RecordingInfo {
        RecordingInfo {
            id: id.into(),
            speakers: speakers.iter().map(|s| s.to_string()).collect(),
            frames,
        }
    }

    fn speakers_of<'a>(recs: &'a [RecordingInfo], fold: &[String]) -> BTreeSet<&'a str> {
        fold.iter()
            .flat_map(|id| {
                recs.iter()
                    .find(|r| &r.id == id)
                    .unwrap()
                    .speakers
                    .iter()
                    .map(String::as_str)
            })
            .collect()
    }

    /// 16 actors in 8 fixed dyads, 5 recordings per dyad.
    fn forty_recordings() -> Vec<RecordingInfo> {
        (0..40)
            .map(|i| {
                let d = i % 8;
                let (a, b) = (format!("actor{}", 2 * d), format!("actor{}", 2 * d + 1));
                rec(&format!("rec{i:02}"), &[&a, &b], 3000 + 97 * i)
            })
            .collect()
    }

    #[test]
    fn forty_recordings_into_five_disjoint_folds() {
        let recs = forty_recordings();
        let split = split_sessions(&recs, 5, 11).unwrap();
        assert_eq!(split.len(), 5);
        assert!(split.folds.iter().all(|f| !f.is_empty()));
        let total: usize = split.folds.iter().map(Vec::len).sum();
        assert_eq!(total, 40);
        for r in &recs {
            assert!(split.fold_of(&r.id).is_some());
        }
        for a in 0..5 {
            for b in a + 1..5 {
                let (sa, sb) = (speakers_of(&recs, &split.folds[a]), speakers_of(&recs, &split.folds[b]));
                assert!(sa.is_disjoint(&sb), "folds {a} and {b} share speakers");
            }
        }
        assert_eq!(split, split_sessions(&recs, 5, 11).unwrap());
    }

    #[test]
    fn single_global_speaker_cannot_split() {
        let recs = [
            rec("a", &["x", "y"], 10),
            rec("b", &["x", "z"], 10),
            rec("c", &["z"], 10),
        ];
        assert!(matches!(
            split_sessions(&recs, 2, 0),
            Err(Error::TooFewGroups { groups: 1, folds: 2 })
        ));
    }

    #[test]
    fn two_dyads_two_folds() {
        let recs = [
            rec("a1", &["a", "b"], 100),
            rec("c1", &["c", "d"], 100),
            rec("a2", &["b", "a"], 50),
            rec("c2", &["d", "c"], 50),
        ];
        let split = split_sessions(&recs, 2, 3).unwrap();
        let mut folds = split.folds.clone();
        folds.sort();
        assert_eq!(
            folds,
            vec![vec!["a1".to_string(), "a2".into()], vec!["c1".into(), "c2".into()]]
        );
    }

    #[test]
    fn transitive_speaker_links_are_merged() {
        // a-b, b-c: all three recordings must land together.
        let recs = [
            rec("r1", &["a", "b"], 1),
            rec("r2", &["x"], 1),
            rec("r3", &["c"], 1),
            rec("r4", &["b", "c"], 1),
        ];
        let split = split_sessions(&recs, 2, 0).unwrap();
        let f = split.fold_of("r1").unwrap();
        assert_eq!(split.fold_of("r3"), Some(f));
        assert_eq!(split.fold_of("r4"), Some(f));
        assert_ne!(split.fold_of("r2"), Some(f));
    }
}
