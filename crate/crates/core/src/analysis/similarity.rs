//! Pairwise method similarity and threshold clustering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{pair_similarity, AnalysisError};
use crate::mask::NormalizedMask;

/// Mean cosine similarity between the masks of every pair of methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSimilarityMatrix {
    pub method_ids: Vec<String>,
    /// Row-major, symmetric, unit diagonal.
    pub scores: Vec<Vec<f64>>,
    pub n_images: usize,
}

impl MethodSimilarityMatrix {
    pub fn from_scores(method_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self, AnalysisError> {
        let k = method_ids.len();
        let bad = |msg: String| AnalysisError::InvalidInput(msg);
        if scores.len() != k || scores.iter().any(|r| r.len() != k) {
            return Err(bad(format!("similarity matrix must be {k}x{k}")));
        }
        for i in 0..k {
            if scores[i][i] != 1.0 {
                return Err(bad(format!("diagonal entry {i} is {}, not 1", scores[i][i])));
            }
            for j in 0..k {
                let v = scores[i][j];
                if !(0.0..=1.0).contains(&v) || v != scores[j][i] {
                    return Err(bad(format!("entry ({i},{j}) = {v} is not symmetric in [0,1]")));
                }
            }
        }
        Ok(MethodSimilarityMatrix {
            method_ids,
            scores,
            n_images: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.method_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.method_ids.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.method_ids.iter().position(|m| m == a)?;
        let j = self.method_ids.iter().position(|m| m == b)?;
        Some(self.scores[i][j])
    }
}

/// Entry `(i, j)` is the mean over `image_ids` of the cosine similarity of
/// method `i`'s and method `j`'s masks. An all-zero mask scores 0 against
/// everything but itself.
pub fn pairwise_method_similarity(
    method_ids: &[String],
    image_ids: &[String],
    masks: &BTreeMap<String, BTreeMap<String, NormalizedMask>>,
) -> Result<MethodSimilarityMatrix, AnalysisError> {
    let k = method_ids.len();
    let mut columns: Vec<Vec<&NormalizedMask>> = Vec::with_capacity(k);
    for m in method_ids {
        let per_image = masks.get(m);
        let mut col = Vec::with_capacity(image_ids.len());
        for img in image_ids {
            let mask = per_image.and_then(|p| p.get(img)).ok_or_else(|| AnalysisError::MissingMask {
                detector: None,
                method: m.clone(),
                image: img.clone(),
            })?;
            col.push(mask);
        }
        columns.push(col);
    }
    let mut scores = vec![vec![0.0; k]; k];
    for i in 0..k {
        scores[i][i] = 1.0;
        for j in i + 1..k {
            let mut total = 0.0;
            for n in 0..image_ids.len() {
                total += pair_similarity(columns[i][n], columns[j][n])?;
            }
            let mean = if image_ids.is_empty() {
                0.0
            } else {
                total / image_ids.len() as f64
            };
            scores[i][j] = mean;
            scores[j][i] = mean;
        }
    }
    Ok(MethodSimilarityMatrix {
        method_ids: method_ids.to_vec(),
        scores,
        n_images: image_ids.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCluster {
    /// Members in matrix order.
    pub members: Vec<String>,
    /// Members that were added by the cross-cluster rule and also belong to
    /// another cluster.
    pub shared: Vec<String>,
}

fn average_linkage(scores: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in a {
        for &j in b {
            total += scores[i][j];
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Average-linkage agglomerative clustering cut at `tau`, followed by the
/// cross-cluster rule: a method whose average similarity to the members of
/// another cluster is at least `tau` is listed in that cluster too.
///
/// Merging always picks the pair with the highest linkage; ties go to the
/// pair whose clusters come first in matrix order.
pub fn cluster_methods(msm: &MethodSimilarityMatrix, tau: f64) -> Result<Vec<MethodCluster>, AnalysisError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(AnalysisError::InvalidInput(format!("tau must be in [0, 1], got {tau}")));
    }
    let k = msm.len();
    let mut groups: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let link = average_linkage(&msm.scores, &groups[a], &groups[b]);
                if link >= tau && best.is_none_or(|(l, _, _)| link > l) {
                    best = Some((link, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        let merged = groups.remove(b);
        groups[a].extend(merged);
        groups[a].sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);

    let mut extra: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    for m in 0..k {
        for (g, members) in groups.iter().enumerate() {
            if members.contains(&m) {
                continue;
            }
            if average_linkage(&msm.scores, &[m], members) >= tau {
                extra[g].push(m);
            }
        }
    }
    Ok(groups
        .into_iter()
        .zip(extra)
        .map(|(core, extra)| {
            let mut all: Vec<usize> = core.iter().chain(&extra).copied().collect();
            all.sort_unstable();
            MethodCluster {
                members: all.iter().map(|&i| msm.method_ids[i].clone()).collect(),
                shared: extra.iter().map(|&i| msm.method_ids[i].clone()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nm(values: Vec<f64>) -> NormalizedMask {
        NormalizedMask::try_from(Mask::new(values.len(), 1, values).unwrap()).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn hand_computed_means() {
        let mut masks = BTreeMap::new();
        let imgs = vec!["a".to_string(), "b".to_string()];
        masks.insert("m0".to_string(), BTreeMap::from([("a".into(), nm(vec![1.0, 0.0])), ("b".into(), nm(vec![1.0, 1.0]))]));
        masks.insert("m1".to_string(), BTreeMap::from([("a".into(), nm(vec![1.0, 1.0])), ("b".into(), nm(vec![1.0, 1.0]))]));
        masks.insert("m2".to_string(), BTreeMap::from([("a".into(), nm(vec![0.0, 1.0])), ("b".into(), nm(vec![0.0, 1.0]))]));
        let m = pairwise_method_similarity(&ids(3), &imgs, &masks).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [
            [1.0, (r + 1.0) / 2.0, (0.0 + r) / 2.0],
            [(r + 1.0) / 2.0, 1.0, (r + r) / 2.0],
            [(0.0 + r) / 2.0, (r + r) / 2.0, 1.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.scores[i][j] - expect[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(m.n_images, 2);

        masks.get_mut("m2").unwrap().remove("b");
        match pairwise_method_similarity(&ids(3), &imgs, &masks) {
            Err(AnalysisError::MissingMask { method, image, .. }) => {
                assert_eq!((method.as_str(), image.as_str()), ("m2", "b"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_and_disjoint() {
        let imgs = vec!["a".to_string()];
        let masks = BTreeMap::from([
            ("m0".to_string(), BTreeMap::from([("a".to_string(), nm(vec![1.0, 0.0]))])),
            ("m1".to_string(), BTreeMap::from([("a".to_string(), nm(vec![1.0, 0.0]))])),
            ("m2".to_string(), BTreeMap::from([("a".to_string(), nm(vec![0.0, 1.0]))])),
        ]);
        let m = pairwise_method_similarity(&ids(3), &imgs, &masks).unwrap();
        assert_eq!(m.scores[0][1], 1.0);
        assert_eq!(m.scores[0][2], 0.0);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<String> = (0..4).map(|i| format!("i{i}")).collect();
        let mut masks = BTreeMap::new();
        for m in ids(4) {
            let per: BTreeMap<String, NormalizedMask> = imgs
                .iter()
                .map(|i| (i.clone(), nm((0..6).map(|_| rng.random::<f64>()).collect())))
                .collect();
            masks.insert(m, per);
        }
        let order = ids(4);
        let perm: Vec<String> = [2, 0, 3, 1].iter().map(|&i| order[i].clone()).collect();
        let a = pairwise_method_similarity(&order, &imgs, &masks).unwrap();
        let b = pairwise_method_similarity(&perm, &imgs, &masks).unwrap();
        for x in &order {
            for y in &order {
                assert_eq!(a.get(x, y), b.get(x, y));
            }
        }
    }

    /// All set partitions of `0..n`.
    fn partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in partitions(n - 1) {
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i].push(n - 1);
                out.push(q);
            }
            let mut q = p.clone();
            q.push(vec![n - 1]);
            out.push(q);
        }
        out
    }

    /// Oracle: the coarsest partition whose clusters have every internal
    /// pair at or above `tau`, by brute force.
    fn oracle(scores: &[Vec<f64>], tau: f64) -> Vec<Vec<usize>> {
        let mut best: Option<Vec<Vec<usize>>> = None;
        for p in partitions(scores.len()) {
            let ok = p.iter().all(|c| {
                c.iter().all(|&i| c.iter().all(|&j| i == j || scores[i][j] >= tau))
            });
            if ok && best.as_ref().is_none_or(|b| p.len() < b.len()) {
                best = Some(p);
            }
        }
        let mut best = best.unwrap();
        for c in &mut best {
            c.sort_unstable();
        }
        best.sort_by_key(|c| c[0]);
        best
    }

    fn block_matrix(rng: &mut ChaCha8Rng, sizes: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut family = Vec::new();
        for (f, &s) in sizes.iter().enumerate() {
            family.extend(std::iter::repeat_n(f, s));
        }
        // Shuffle so families are interleaved in matrix order.
        for i in (1..family.len()).rev() {
            let j = rng.random_range(0..=i);
            family.swap(i, j);
        }
        let k = family.len();
        let mut s = vec![vec![1.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let v = if family[i] == family[j] {
                    rng.random_range(0.85..=1.0)
                } else {
                    rng.random_range(0.0..=0.5)
                };
                s[i][j] = v;
                s[j][i] = v;
            }
        }
        (s, family)
    }

    #[test]
    fn recovers_blocks_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..60 {
            let n_fam = rng.random_range(1..=3);
            let mut sizes: Vec<usize> = (0..n_fam).map(|_| rng.random_range(1..=3)).collect();
            while sizes.iter().sum::<usize>() > 8 {
                sizes.pop();
            }
            let (scores, _) = block_matrix(&mut rng, &sizes);
            let k = scores.len();
            let msm = MethodSimilarityMatrix::from_scores(ids(k), scores.clone()).unwrap();
            let got: Vec<Vec<usize>> = cluster_methods(&msm, 0.8)
                .unwrap()
                .iter()
                .map(|c| {
                    assert!(c.shared.is_empty());
                    c.members.iter().map(|m| m[1..].parse().unwrap()).collect()
                })
                .collect();
            assert_eq!(got, oracle(&scores, 0.8), "trial {trial}");
        }
    }

    #[test]
    fn dual_membership() {
        // Blocks {0,1,2} and {3,4}; method 5 is close to both.
        let mut s = vec![vec![0.2; 6]; 6];
        for (i, row) in s.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(a, b) in &[(0, 1), (0, 2), (1, 2), (3, 4)] {
            s[a][b] = 0.9;
            s[b][a] = 0.9;
        }
        for i in 0..5 {
            s[5][i] = 0.85;
            s[i][5] = 0.85;
        }
        let msm = MethodSimilarityMatrix::from_scores(ids(6), s).unwrap();
        let c = cluster_methods(&msm, 0.8).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members, vec!["m0", "m1", "m2", "m5"]);
        assert_eq!(c[1].members, vec!["m3", "m4", "m5"]);
        assert_eq!(c[0].shared.len() + c[1].shared.len(), 1);
    }

    #[test]
    fn threshold_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (s, _) = block_matrix(&mut rng, &[3, 2, 2]);
        let msm = MethodSimilarityMatrix::from_scores(ids(7), s).unwrap();
        assert_eq!(cluster_methods(&msm, 0.0).unwrap().len(), 1);
        let singletons = cluster_methods(&msm, 1.0).unwrap();
        assert_eq!(singletons.len(), 7);
        assert!(singletons.iter().all(|c| c.members.len() == 1));
        assert!(cluster_methods(&msm, 1.5).is_err());

        let ones = MethodSimilarityMatrix::from_scores(ids(3), vec![vec![1.0; 3]; 3]).unwrap();
        assert_eq!(cluster_methods(&ones, 0.8).unwrap()[0].members.len(), 3);
    }
}
