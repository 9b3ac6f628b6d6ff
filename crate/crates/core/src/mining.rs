//! Mega-batch construction and hard-negative mining.
//!
//! A mega-batch aggregates `M` consecutive mini-batches of positive pairs.
//! Every member is scored against the anchors and positives of all other
//! members with one snapshot of the encoder, the closest ones are kept as
//! hard negatives, and the mega-batch is split back into its mini-batches.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::dataset::PairRecord;
use crate::error::{Error, Result};
use crate::geometry::{dot, Embedding};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberPair {
    pub anchor: String,
    pub positive: String,
}

#[derive(Debug, Clone)]
pub struct MegaBatch {
    members: Vec<MemberPair>,
    assignment: Vec<usize>,
    mini_batches: usize,
    clusters: Option<Vec<u64>>,
}

impl MegaBatch {
    pub fn members(&self) -> &[MemberPair] {
        &self.members
    }

    /// Source mini-batch of each member.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Number of aggregated mini-batches (`M`).
    pub fn mini_batch_count(&self) -> usize {
        self.mini_batches
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Tags each member with a meaning cluster. Candidates owned by a member
    /// of the anchor's cluster are then treated as positives and never mined.
    pub fn with_clusters(mut self, clusters: Vec<u64>) -> Result<Self> {
        if clusters.len() != self.members.len() {
            return Err(Error::IndexMismatch {
                expected: self.members.len(),
                actual: clusters.len(),
            });
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    pub fn clusters(&self) -> Option<&[u64]> {
        self.clusters.as_deref()
    }
}

pub fn aggregate_mega_batch(mini_batches: &[Vec<PairRecord>]) -> Result<MegaBatch> {
    if mini_batches.is_empty() {
        return Err(Error::EmptyInput(
            "mega-batch needs at least one mini-batch",
        ));
    }
    let mut members = Vec::new();
    let mut assignment = Vec::new();
    let mut seen = HashSet::new();
    for (b, batch) in mini_batches.iter().enumerate() {
        if batch.is_empty() {
            return Err(Error::EmptyInput("mini-batch is empty"));
        }
        for rec in batch {
            if !rec.label {
                return Err(Error::InvalidParams(format!(
                    "pair {} -> {} is not a positive pair",
                    rec.anchor_id, rec.candidate_id
                )));
            }
            if !seen.insert(rec.anchor_id.as_str()) {
                return Err(Error::DuplicateAnchor(rec.anchor_id.clone()));
            }
            members.push(MemberPair {
                anchor: rec.anchor_id.clone(),
                positive: rec.candidate_id.clone(),
            });
            assignment.push(b);
        }
    }
    Ok(MegaBatch {
        members,
        assignment,
        mini_batches: mini_batches.len(),
        clusters: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MiningStrategy {
    /// The `n` most similar candidates per member.
    TopN { n: usize },
    /// Every candidate with cosine strictly above `tau`, optionally capped.
    Threshold { tau: f64, cap: Option<usize> },
}

impl MiningStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MiningStrategy::TopN { n: 0 } => {
                Err(Error::InvalidParams("top-n mining needs n >= 1".into()))
            }
            MiningStrategy::Threshold { tau, .. } if !(tau > -1.0 && tau < 1.0) => Err(
                Error::InvalidParams(format!("mining threshold must lie in (-1, 1), got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MiningStrategy::TopN { .. } => "top_n",
            MiningStrategy::Threshold { .. } => "threshold",
        }
    }
}

/// Descending cosine, ties by ascending id.
fn rank(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct Pool<'a> {
    ids: Vec<&'a str>,
    vectors: Vec<&'a Embedding>,
    /// Members that contribute each pooled id.
    owners: Vec<Vec<usize>>,
}

fn build_pool<'a>(
    mega: &'a MegaBatch,
    embeddings: &'a HashMap<String, Embedding>,
) -> Result<Pool<'a>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut pool = Pool {
        ids: Vec::new(),
        vectors: Vec::new(),
        owners: Vec::new(),
    };
    for (m, member) in mega.members.iter().enumerate() {
        for id in [member.anchor.as_str(), member.positive.as_str()] {
            let slot = match index.get(id) {
                Some(&slot) => slot,
                None => {
                    let v = embeddings
                        .get(id)
                        .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
                    index.insert(id, pool.ids.len());
                    pool.ids.push(id);
                    pool.vectors.push(v);
                    pool.owners.push(Vec::new());
                    pool.ids.len() - 1
                }
            };
            if pool.owners[slot].last() != Some(&m) {
                pool.owners[slot].push(m);
            }
        }
    }
    Ok(pool)
}

fn candidates<'a>(
    mega: &MegaBatch,
    pool: &Pool<'a>,
    anchor: &Embedding,
    i: usize,
) -> Vec<(f64, &'a str)> {
    let me = &mega.members[i];
    let cluster = mega.clusters.as_ref().map(|c| c[i]);
    let mut out = Vec::with_capacity(pool.ids.len());
    for (slot, &id) in pool.ids.iter().enumerate() {
        if id == me.anchor || id == me.positive {
            continue;
        }
        if let (Some(c), Some(all)) = (cluster, mega.clusters.as_ref()) {
            if pool.owners[slot].iter().any(|&m| all[m] == c) {
                continue;
            }
        }
        let cos = dot(anchor.as_slice(), pool.vectors[slot].as_slice()).clamp(-1.0, 1.0);
        out.push((cos, id));
    }
    out
}

/// Mines hard negatives for every member, returned in member order.
pub fn mine(
    mega: &MegaBatch,
    embeddings: &HashMap<String, Embedding>,
    strategy: &MiningStrategy,
) -> Result<Vec<Vec<String>>> {
    strategy.validate()?;
    let pool = build_pool(mega, embeddings)?;
    let anchor_slot: HashMap<&str, usize> = pool
        .ids
        .iter()
        .enumerate()
        .map(|(s, &id)| (id, s))
        .collect();
    let select = |i: usize| -> Vec<String> {
        let anchor = pool.vectors[anchor_slot[mega.members[i].anchor.as_str()]];
        let mut cands = candidates(mega, &pool, anchor, i);
        match *strategy {
            MiningStrategy::TopN { n } => {
                if cands.len() > n {
                    cands.select_nth_unstable_by(n - 1, rank);
                    cands.truncate(n);
                }
                cands.sort_unstable_by(rank);
            }
            MiningStrategy::Threshold { tau, cap } => {
                cands.retain(|c| c.0 > tau);
                cands.sort_unstable_by(rank);
                if let Some(cap) = cap {
                    cands.truncate(cap);
                }
            }
        }
        cands.into_iter().map(|(_, id)| id.to_string()).collect()
    };
    Ok(par::map_range(mega.len(), select))
}

pub fn mine_top_n(
    mega: &MegaBatch,
    embeddings: &HashMap<String, Embedding>,
    n: usize,
) -> Result<Vec<Vec<String>>> {
    mine(mega, embeddings, &MiningStrategy::TopN { n })
}

pub fn mine_threshold(
    mega: &MegaBatch,
    embeddings: &HashMap<String, Embedding>,
    tau: f64,
    cap: Option<usize>,
) -> Result<Vec<Vec<String>>> {
    mine(mega, embeddings, &MiningStrategy::Threshold { tau, cap })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlueprintMember {
    pub anchor: String,
    pub positive: String,
    pub hard_negatives: Vec<String>,
}

/// One mini-batch ready to be encoded into a loss batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchBlueprint {
    pub members: Vec<BlueprintMember>,
}

/// Restores the mini-batch partition. Each member's hard negatives are its
/// dataset hard negatives followed by mined ones, without duplicates.
pub fn split_mini_batches(
    mega: &MegaBatch,
    mined: &[Vec<String>],
    dataset_hards: &[Vec<String>],
) -> Result<Vec<MiniBatchBlueprint>> {
    for len in [mined.len(), dataset_hards.len()] {
        if len != mega.len() {
            return Err(Error::IndexMismatch {
                expected: mega.len(),
                actual: len,
            });
        }
    }
    let mut out = vec![
        MiniBatchBlueprint {
            members: Vec::new()
        };
        mega.mini_batches
    ];
    for (i, member) in mega.members.iter().enumerate() {
        let mut seen: HashSet<&str> = HashSet::new();
        seen.insert(&member.anchor);
        seen.insert(&member.positive);
        let hard_negatives = dataset_hards[i]
            .iter()
            .chain(&mined[i])
            .filter(|id| seen.insert(id.as_str()))
            .cloned()
            .collect();
        out[mega.assignment[i]].members.push(BlueprintMember {
            anchor: member.anchor.clone(),
            positive: member.positive.clone(),
            hard_negatives,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::geometry::l2_normalize;

    fn pos(a: &str, b: &str) -> PairRecord {
        PairRecord {
            anchor_id: a.into(),
            candidate_id: b.into(),
            label: true,
            split: Split::Train,
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn aggregate_counts_and_assignment() {
        let a = vec![pos("a1", "b1"), pos("a2", "b2"), pos("a3", "b3")];
        let b = vec![
            pos("a4", "b4"),
            pos("a5", "b5"),
            pos("a6", "b6"),
            pos("a7", "b7"),
        ];
        let mega = aggregate_mega_batch(&[a.clone(), b]).unwrap();
        assert_eq!(mega.len(), 7);
        assert_eq!(mega.mini_batch_count(), 2);
        assert_eq!(mega.assignment(), &[0, 0, 0, 1, 1, 1, 1]);

        let single = aggregate_mega_batch(std::slice::from_ref(&a)).unwrap();
        let anchors: Vec<&str> = single.members().iter().map(|m| m.anchor.as_str()).collect();
        assert_eq!(anchors, ["a1", "a2", "a3"]);
        assert_eq!(single.mini_batch_count(), 1);
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        let dup = aggregate_mega_batch(&[vec![pos("a", "b")], vec![pos("a", "c")]]);
        assert!(matches!(dup, Err(Error::DuplicateAnchor(id)) if id == "a"));
        assert!(matches!(
            aggregate_mega_batch(&[]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            aggregate_mega_batch(&[vec![]]),
            Err(Error::EmptyInput(_))
        ));
        let mut neg = pos("a", "b");
        neg.label = false;
        assert!(aggregate_mega_batch(&[vec![neg]]).is_err());
    }

    /// Anchor `a0` plus three other members whose anchors sit at cosines
    /// 0.9, 0.5 and 0.1 from it; all positives are orthogonal-ish far away.
    fn ranking_fixture() -> (MegaBatch, HashMap<String, Embedding>) {
        let mega = aggregate_mega_batch(&[vec![
            pos("a0", "p0"),
            pos("a1", "p1"),
            pos("a2", "p2"),
            pos("a3", "p3"),
        ]])
        .unwrap();
        let at = |c: f64| vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0];
        let mut emb = HashMap::new();
        emb.insert("a0".to_string(), l2_normalize(&at(1.0)).unwrap());
        emb.insert("a1".to_string(), l2_normalize(&at(0.9)).unwrap());
        emb.insert("a2".to_string(), l2_normalize(&at(0.5)).unwrap());
        emb.insert("a3".to_string(), l2_normalize(&at(0.1)).unwrap());
        for p in ["p0", "p1", "p2", "p3"] {
            emb.insert(p.to_string(), l2_normalize(&[0.0, 0.0, 1.0, 0.0]).unwrap());
        }
        (mega, emb)
    }

    #[test]
    fn top_n_ranks_by_cosine() {
        let (mega, mut emb) = ranking_fixture();
        // push the positives below every anchor candidate
        for p in ["p1", "p2", "p3"] {
            emb.insert(p.to_string(), l2_normalize(&[-1.0, 0.0, 0.0, 0.1]).unwrap());
        }
        let mined = mine_top_n(&mega, &emb, 2).unwrap();
        assert_eq!(mined[0], ids(&["a1", "a2"]));

        let all = mine_top_n(&mega, &emb, 100).unwrap();
        assert_eq!(all[0].len(), 6);
        assert_eq!(&all[0][..3], &ids(&["a1", "a2", "a3"])[..]);
    }

    #[test]
    fn equal_cosines_break_ties_by_id() {
        let (mega, emb) = ranking_fixture();
        // p1, p2, p3 all share one vector at cosine 0 to a0
        let mined = mine_top_n(&mega, &emb, 6).unwrap();
        assert_eq!(mined[0], ids(&["a1", "a2", "a3", "p1", "p2", "p3"]));
    }

    #[test]
    fn threshold_examples() {
        let (mega, emb) = ranking_fixture();
        let mined = mine_threshold(&mega, &emb, 0.4, None).unwrap();
        assert_eq!(mined[0], ids(&["a1", "a2"]));
        let capped = mine_threshold(&mega, &emb, 0.4, Some(1)).unwrap();
        assert_eq!(capped[0], ids(&["a1"]));
        let none = mine_threshold(&mega, &emb, 0.99, None).unwrap();
        assert!(none[0].is_empty());
        assert!(mine_threshold(&mega, &emb, 1.0, None).is_err());
    }

    #[test]
    fn own_pair_and_cluster_mates_are_excluded() {
        let (mega, emb) = ranking_fixture();
        let mega = mega.with_clusters(vec![7, 7, 1, 2]).unwrap();
        let mined = mine_top_n(&mega, &emb, 10).unwrap();
        for (i, list) in mined.iter().enumerate() {
            let m = &mega.members()[i];
            assert!(!list.contains(&m.anchor) && !list.contains(&m.positive));
        }
        assert!(!mined[0].iter().any(|id| id == "a1" || id == "p1"));
        assert!(mined[0].contains(&"a2".to_string()));
    }

    #[test]
    fn missing_embedding_is_reported() {
        let (mega, mut emb) = ranking_fixture();
        emb.remove("p2");
        assert!(
            matches!(mine_top_n(&mega, &emb, 1), Err(Error::MissingEmbedding(id)) if id == "p2")
        );
    }

    #[test]
    fn split_merges_dataset_and_mined() {
        let mega = aggregate_mega_batch(&[vec![pos("a", "b"), pos("c", "d")], vec![pos("e", "f")]])
            .unwrap();
        let empty = vec![Vec::new(); 3];
        let data = vec![ids(&["x"]), vec![], ids(&["y", "z"])];
        let mined = vec![ids(&["c", "x", "w"]), ids(&["a"]), vec![]];

        let only_data = split_mini_batches(&mega, &empty, &data).unwrap();
        assert_eq!(only_data.len(), 2);
        assert_eq!(only_data[0].members[0].hard_negatives, ids(&["x"]));
        assert_eq!(only_data[1].members[0].hard_negatives, ids(&["y", "z"]));

        let only_mined = split_mini_batches(&mega, &mined, &empty).unwrap();
        assert_eq!(
            only_mined[0].members[0].hard_negatives,
            ids(&["c", "x", "w"])
        );

        let both = split_mini_batches(&mega, &mined, &data).unwrap();
        assert_eq!(both[0].members[0].hard_negatives, ids(&["x", "c", "w"]));
        assert_eq!(both[0].members[1].hard_negatives, ids(&["a"]));

        assert!(matches!(
            split_mini_batches(&mega, &empty[..2], &data),
            Err(Error::IndexMismatch {
                expected: 3,
                actual: 2
            })
        ));
    }

    #[test]
    fn split_restores_partition() {
        let batches = vec![
            vec![pos("a", "b"), pos("c", "d")],
            vec![pos("e", "f")],
            vec![pos("g", "h"), pos("i", "j"), pos("k", "l")],
        ];
        let mega = aggregate_mega_batch(&batches).unwrap();
        let empty = vec![Vec::new(); mega.len()];
        let split = split_mini_batches(&mega, &empty, &empty).unwrap();
        for (orig, bp) in batches.iter().zip(&split) {
            let a: Vec<&str> = orig.iter().map(|r| r.anchor_id.as_str()).collect();
            let b: Vec<&str> = bp.members.iter().map(|m| m.anchor.as_str()).collect();
            assert_eq!(a, b);
        }
    }
}
