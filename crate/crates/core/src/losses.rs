//! Training objectives and their analytic gradients.
//!
//! * InfoNCE over (query, positive, negatives) with temperature `tau_infonce`.
//! * RankNet over every ordered pair of a ranked candidate list with
//!   temperature `tau_ranknet`: a pair where `d_j` is ranked above `d_k`
//!   contributes `log(1 + exp((s_k - s_j) / tau))`.
//! * Combined: `infonce_weight * InfoNCE + lambda * RankNet`.
//!
//! [`loss_gradients`] differentiates the combined loss through cosine
//! similarity, the projection and mean pooling of the reference encoder.

use thiserror::Error;

use crate::encoder::EncoderParams;
use crate::linalg::{self, LinalgError};
use crate::tokenizer::TokenId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("instance {instance}: duplicate rank {rank}")]
    DuplicateRank { instance: usize, rank: u32 },
    #[error("instance {instance}: rank {rank} outside 1..={n}")]
    RankOutOfRange {
        instance: usize,
        rank: u32,
        n: usize,
    },
    #[error("instance {instance}: {scores} scores but {ranks} ranks")]
    RankLength {
        instance: usize,
        scores: usize,
        ranks: usize,
    },
    #[error("non-finite score in instance {instance}")]
    NonFiniteScore { instance: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which sign the RankNet exponent uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankNetConvention {
    /// Penalize the worse document scoring above the better one.
    #[default]
    Standard,
    /// `exp(s_j/τ − s_k/τ)` for `r_j < r_k` exactly as printed, which rewards
    /// inversions. Only for comparison against the standard form.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau_infonce: f64,
    pub tau_ranknet: f64,
    pub lambda: f64,
    /// Weight on the InfoNCE term; 0 drops it entirely.
    pub infonce_weight: f64,
    pub convention: RankNetConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau_infonce: 0.03,
            tau_ranknet: 0.1,
            lambda: 2.0,
            infonce_weight: 1.0,
            convention: RankNetConvention::Standard,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau_infonce > 0.0 && self.tau_ranknet > 0.0) {
            return Err("temperatures must be strictly positive".into());
        }
        if !(self.lambda >= 0.0 && self.infonce_weight >= 0.0) {
            return Err("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

/// Similarity scores for one training instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredCandidates {
    pub positive_score: f64,
    pub negative_scores: Vec<f64>,
    /// Scores over the ranked candidate set, parallel to `ranks`.
    pub all_scores: Vec<f64>,
    /// 1 = most relevant.
    pub ranks: Vec<u32>,
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log softmax(logits)[0]`, shifted by the max logit. When the first logit
/// is the max the result is computed with `ln_1p` so tiny losses survive.
fn neg_log_softmax_first(logits: &[f64]) -> f64 {
    let first = logits[0];
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == first {
        let rest: f64 = logits[1..].iter().map(|z| (z - m).exp()).sum();
        rest.ln_1p()
    } else {
        let total: f64 = logits.iter().map(|z| (z - m).exp()).sum();
        (m - first) + total.ln()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn check_ranks(instance: usize, scores: &[f64], ranks: &[u32]) -> Result<(), LossError> {
    if scores.len() != ranks.len() {
        return Err(LossError::RankLength {
            instance,
            scores: scores.len(),
            ranks: ranks.len(),
        });
    }
    let n = ranks.len();
    let mut seen = vec![false; n];
    for &r in ranks {
        if r == 0 || r as usize > n {
            return Err(LossError::RankOutOfRange {
                instance,
                rank: r,
                n,
            });
        }
        if std::mem::replace(&mut seen[r as usize - 1], true) {
            return Err(LossError::DuplicateRank { instance, rank: r });
        }
    }
    Ok(())
}

fn infonce_logits(c: &ScoredCandidates, tau: f64) -> Vec<f64> {
    std::iter::once(c.positive_score)
        .chain(c.negative_scores.iter().copied())
        .map(|s| s / tau)
        .collect()
}

pub fn infonce(batch: &[ScoredCandidates], cfg: &LossConfig) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, c) in batch.iter().enumerate() {
        let logits = infonce_logits(c, cfg.tau_infonce);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(LossError::NonFiniteScore { instance: i });
        }
        total += neg_log_softmax_first(&logits);
    }
    Ok(total / batch.len() as f64)
}

/// Ordered `(better, worse)` index pairs of one instance.
fn ranked_pairs(ranks: &[u32]) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..ranks.len()).flat_map(move |j| {
        (0..ranks.len())
            .filter(move |&k| ranks[j] < ranks[k])
            .map(move |k| (j, k))
    })
}

fn pair_argument(convention: RankNetConvention, better: f64, worse: f64, tau: f64) -> f64 {
    match convention {
        RankNetConvention::Standard => worse / tau - better / tau,
        RankNetConvention::Literal => better / tau - worse / tau,
    }
}

pub fn ranknet(batch: &[ScoredCandidates], cfg: &LossConfig) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, c) in batch.iter().enumerate() {
        check_ranks(i, &c.all_scores, &c.ranks)?;
        if c.all_scores.iter().any(|s| !s.is_finite()) {
            return Err(LossError::NonFiniteScore { instance: i });
        }
        for (j, k) in ranked_pairs(&c.ranks) {
            total += softplus(pair_argument(
                cfg.convention,
                c.all_scores[j],
                c.all_scores[k],
                cfg.tau_ranknet,
            ));
        }
    }
    Ok(total / batch.len() as f64)
}

pub fn combined(batch: &[ScoredCandidates], cfg: &LossConfig) -> Result<f64, LossError> {
    Ok(cfg.infonce_weight * infonce(batch, cfg)? + cfg.lambda * ranknet(batch, cfg)?)
}

/// An InfoNCE term: indices into [`ScoringBatch::sequences`].
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGroup {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// A RankNet term over `docs` ranked by `ranks` (1 = best).
#[derive(Debug, Clone, PartialEq)]
pub struct RankNetGroup {
    pub query: usize,
    pub docs: Vec<usize>,
    pub ranks: Vec<u32>,
}

/// Token sequences plus the loss terms that score them against each other.
/// Each sequence is encoded once per evaluation, however many terms use it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoringBatch {
    pub sequences: Vec<Vec<TokenId>>,
    pub infonce: Vec<InfoNceGroup>,
    pub ranknet: Vec<RankNetGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub infonce: f64,
    pub ranknet: f64,
    pub combined: f64,
}

/// Gradient arrays shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub token_table: Vec<f64>,
    pub projection: Vec<f64>,
}

struct Forward {
    pooled: Vec<Vec<f64>>,
    embeddings: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn forward(batch: &ScoringBatch, params: &EncoderParams) -> Result<Forward, LossError> {
    let pooled: Vec<Vec<f64>> = batch.sequences.iter().map(|s| params.pool(s)).collect();
    let embeddings: Vec<Vec<f64>> = pooled.iter().map(|h| params.project(h)).collect();
    let norms: Vec<f64> = embeddings.iter().map(|e| linalg::norm(e)).collect();
    if norms.contains(&0.0) {
        return Err(LinalgError::ZeroNorm.into());
    }
    Ok(Forward {
        pooled,
        embeddings,
        norms,
    })
}

impl Forward {
    fn score(&self, a: usize, b: usize) -> f64 {
        linalg::cosine_with_norms(
            &self.embeddings[a],
            self.norms[a],
            &self.embeddings[b],
            self.norms[b],
        )
    }

    fn scored(&self, batch: &ScoringBatch) -> (Vec<ScoredCandidates>, Vec<ScoredCandidates>) {
        let inf = batch
            .infonce
            .iter()
            .map(|g| ScoredCandidates {
                positive_score: self.score(g.query, g.positive),
                negative_scores: g
                    .negatives
                    .iter()
                    .map(|&n| self.score(g.query, n))
                    .collect(),
                ..Default::default()
            })
            .collect();
        let rn = batch
            .ranknet
            .iter()
            .map(|g| ScoredCandidates {
                all_scores: g.docs.iter().map(|&d| self.score(g.query, d)).collect(),
                ranks: g.ranks.clone(),
                ..Default::default()
            })
            .collect();
        (inf, rn)
    }
}

fn breakdown(
    inf: &[ScoredCandidates],
    rn: &[ScoredCandidates],
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    let infonce_value = if inf.is_empty() {
        0.0
    } else {
        infonce(inf, cfg)?
    };
    let ranknet_value = if rn.is_empty() {
        0.0
    } else {
        ranknet(rn, cfg)?
    };
    let mut combined = 0.0;
    if cfg.infonce_weight != 0.0 {
        combined += cfg.infonce_weight * infonce_value;
    }
    if cfg.lambda != 0.0 {
        combined += cfg.lambda * ranknet_value;
    }
    Ok(LossBreakdown {
        infonce: infonce_value,
        ranknet: ranknet_value,
        combined,
    })
}

/// Loss values only.
pub fn evaluate_loss(
    batch: &ScoringBatch,
    params: &EncoderParams,
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    if batch.infonce.is_empty() && batch.ranknet.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let fwd = forward(batch, params)?;
    let (inf, rn) = fwd.scored(batch);
    breakdown(&inf, &rn, cfg)
}

/// Loss values and the gradient of `combined` with respect to both parameter
/// arrays. Contributions are accumulated in term order, then sequence order.
pub fn loss_gradients(
    batch: &ScoringBatch,
    params: &EncoderParams,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ParamGradients), LossError> {
    if batch.infonce.is_empty() && batch.ranknet.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let fwd = forward(batch, params)?;
    let (inf, rn) = fwd.scored(batch);
    let losses = breakdown(&inf, &rn, cfg)?;

    let dim = params.dim();
    let mut grad_emb = vec![vec![0.0; dim]; batch.sequences.len()];

    // dL/ds(a, b) pushed onto both embeddings through the cosine.
    let mut push = |a: usize, b: usize, g: f64, s: f64| {
        let (ea, na) = (&fwd.embeddings[a], fwd.norms[a]);
        let (eb, nb) = (&fwd.embeddings[b], fwd.norms[b]);
        for i in 0..dim {
            let ua = ea[i] / na;
            let ub = eb[i] / nb;
            grad_emb[a][i] += g * (ub - s * ua) / na;
            grad_emb[b][i] += g * (ua - s * ub) / nb;
        }
    };

    if cfg.infonce_weight != 0.0 && !inf.is_empty() {
        let scale = cfg.infonce_weight / inf.len() as f64;
        for (group, scored) in batch.infonce.iter().zip(&inf) {
            let p = softmax(&infonce_logits(scored, cfg.tau_infonce));
            let coef = |j: usize| scale * (p[j] - if j == 0 { 1.0 } else { 0.0 }) / cfg.tau_infonce;
            push(group.query, group.positive, coef(0), scored.positive_score);
            for (j, (&n, &s)) in group
                .negatives
                .iter()
                .zip(&scored.negative_scores)
                .enumerate()
            {
                push(group.query, n, coef(j + 1), s);
            }
        }
    }

    if cfg.lambda != 0.0 && !rn.is_empty() {
        let scale = cfg.lambda / rn.len() as f64;
        let tau = cfg.tau_ranknet;
        for (group, scored) in batch.ranknet.iter().zip(&rn) {
            let s = &scored.all_scores;
            let mut dscore = vec![0.0; s.len()];
            for (j, k) in ranked_pairs(&group.ranks) {
                let x = pair_argument(cfg.convention, s[j], s[k], tau);
                let d = sigmoid(x) / tau;
                // dx/ds_k = +1/τ under the standard sign, −1/τ under the literal one.
                let (up, down) = match cfg.convention {
                    RankNetConvention::Standard => (k, j),
                    RankNetConvention::Literal => (j, k),
                };
                dscore[up] += d;
                dscore[down] -= d;
            }
            for ((&doc, &g), &sc) in group.docs.iter().zip(&dscore).zip(s) {
                push(group.query, doc, scale * g, sc);
            }
        }
    }

    let mut grads = ParamGradients {
        token_table: vec![0.0; params.token_table.len()],
        projection: vec![0.0; params.projection.len()],
    };
    let eos = params.eos_id();
    for (seq_idx, ge) in grad_emb.iter().enumerate() {
        if ge.iter().all(|&x| x == 0.0) {
            continue;
        }
        let h = &fwd.pooled[seq_idx];
        // e = W h  =>  dW[i][j] += ge_i h_j ; dh = Wᵀ ge
        let mut dh = vec![0.0; dim];
        for (i, &gi) in ge.iter().enumerate() {
            let row = &params.projection[i * dim..(i + 1) * dim];
            let grow = &mut grads.projection[i * dim..(i + 1) * dim];
            for j in 0..dim {
                grow[j] += gi * h[j];
                dh[j] += row[j] * gi;
            }
        }
        let seq = &batch.sequences[seq_idx];
        let inv_n = 1.0 / (seq.len() + 1) as f64;
        for &t in seq.iter().chain(std::iter::once(&eos)) {
            let t = t as usize;
            let grow = &mut grads.token_table[t * dim..(t + 1) * dim];
            for j in 0..dim {
                grow[j] += dh[j] * inv_n;
            }
        }
    }
    Ok((losses, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn cfg(tau_i: f64, tau_r: f64, lambda: f64) -> LossConfig {
        LossConfig {
            tau_infonce: tau_i,
            tau_ranknet: tau_r,
            lambda,
            ..Default::default()
        }
    }

    fn inst(pos: f64, negs: &[f64]) -> ScoredCandidates {
        ScoredCandidates {
            positive_score: pos,
            negative_scores: negs.to_vec(),
            ..Default::default()
        }
    }

    fn ranked(scores: &[f64], ranks: &[u32]) -> ScoredCandidates {
        ScoredCandidates {
            all_scores: scores.to_vec(),
            ranks: ranks.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn infonce_examples() {
        let v = infonce(&[inst(1.0, &[0.0])], &cfg(1.0, 1.0, 0.0)).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((v - 0.313262).abs() < 5e-7);

        for tau in [0.03, 0.1, 1.0, 7.0] {
            let v = infonce(&[inst(0.4, &[0.4, 0.4, 0.4])], &cfg(tau, 1.0, 0.0)).unwrap();
            assert!((v - 4f64.ln()).abs() < 1e-15);
        }

        let v = infonce(&[inst(1.0, &[0.0])], &LossConfig::default()).unwrap();
        let expected = (-1.0f64 / 0.03).exp(); // log(1+x) ≈ x for tiny x
        assert!((v - expected).abs() / expected < 1e-12);
        assert!((v - 3.3e-15).abs() < 0.1e-15);
    }

    #[test]
    fn infonce_extreme_scores_stay_finite() {
        let v = infonce(&[inst(-1.0, &[1.0, 1.0])], &cfg(1e-4, 1.0, 0.0)).unwrap();
        assert!(v.is_finite());
        assert!((v - (2.0 / 1e-4 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn infonce_empty_batch() {
        assert_eq!(
            infonce(&[], &LossConfig::default()),
            Err(LossError::EmptyBatch)
        );
        assert_eq!(
            ranknet(&[], &LossConfig::default()),
            Err(LossError::EmptyBatch)
        );
    }

    #[test]
    fn ranknet_examples() {
        let c = cfg(0.03, 0.1, 2.0);
        let v = ranknet(&[ranked(&[0.8, 0.2], &[1, 2])], &c).unwrap();
        assert!((v - (-6.0f64).exp().ln_1p()).abs() < 1e-15);
        assert!((v - 0.002476).abs() < 5e-7);
        let v = ranknet(&[ranked(&[0.3, 0.3], &[1, 2])], &c).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = ranknet(&[ranked(&[0.3, 0.3, 0.3], &[2, 3, 1])], &c).unwrap();
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ranknet_rank_validation() {
        let c = LossConfig::default();
        assert_eq!(
            ranknet(&[ranked(&[0.1, 0.2], &[1, 1])], &c),
            Err(LossError::DuplicateRank {
                instance: 0,
                rank: 1
            })
        );
        assert!(matches!(
            ranknet(&[ranked(&[0.1, 0.2], &[1, 3])], &c),
            Err(LossError::RankOutOfRange { rank: 3, .. })
        ));
        assert!(matches!(
            ranknet(&[ranked(&[0.1], &[1, 2])], &c),
            Err(LossError::RankLength { .. })
        ));
        // Zero-pair instance contributes nothing.
        assert_eq!(ranknet(&[ranked(&[], &[])], &c).unwrap(), 0.0);
    }

    #[test]
    fn literal_convention_rewards_inversions() {
        let mut c = cfg(0.03, 0.1, 2.0);
        let good = ranked(&[0.8, 0.2], &[1, 2]);
        let standard = ranknet(std::slice::from_ref(&good), &c).unwrap();
        c.convention = RankNetConvention::Literal;
        let literal = ranknet(&[good], &c).unwrap();
        assert!(literal > standard);
        assert!((literal - 6.0f64.exp().ln_1p()).abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        let mut c = cfg(1.0, 1.0, 2.0);
        let mut b = inst(1.0, &[0.0]);
        b.all_scores = vec![0.8, 0.2];
        b.ranks = vec![1, 2];
        let inf = infonce(&[b.clone()], &c).unwrap();
        let rn = ranknet(&[b.clone()], &c).unwrap();
        assert_eq!(combined(&[b.clone()], &c).unwrap(), inf + 2.0 * rn);
        assert!((inf + 2.0 * rn - (0.313262 + 2.0 * (-0.6f64).exp().ln_1p())).abs() < 5e-7);
        c.lambda = 0.0;
        assert_eq!(combined(&[b.clone()], &c).unwrap(), inf);
        c.lambda = 2.0;
        c.infonce_weight = 0.0;
        assert_eq!(combined(&[b], &c).unwrap(), 2.0 * rn);
        assert_eq!(0.5 + 2.0 * 0.25, 1.0);
    }

    proptest! {
        #[test]
        fn infonce_non_negative(pos in -1.0f64..1.0, negs in prop::collection::vec(-1.0f64..1.0, 0..10),
                                tau in 0.01f64..2.0) {
            let v = infonce(&[inst(pos, &negs)], &cfg(tau, 1.0, 0.0)).unwrap();
            prop_assert!(v >= 0.0 && v.is_finite());
        }

        #[test]
        fn infonce_uniform_is_log_count(s in -1.0f64..1.0, m in 0usize..20, tau in 0.01f64..2.0) {
            let v = infonce(&[inst(s, &vec![s; m])], &cfg(tau, 1.0, 0.0)).unwrap();
            prop_assert!((v - ((m + 1) as f64).ln()).abs() < 1e-12);
        }

        #[test]
        fn ranknet_shift_invariant(scores in prop::collection::vec(-1.0f64..1.0, 1..12),
                                   shift in -1.0f64..1.0, seed in 0u64..1000) {
            let mut ranks: Vec<u32> = (1..=scores.len() as u32).collect();
            rng::shuffle(&mut rng::seeded(seed), &mut ranks);
            let c = LossConfig::default();
            let a = ranknet(&[ranked(&scores, &ranks)], &c).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = ranknet(&[ranked(&shifted, &ranks)], &c).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn ranknet_decreases_as_misordered_gap_closes(better in -1.0f64..0.0, worse in 0.0f64..1.0,
                                                      other in -1.0f64..1.0, delta in 0.01f64..0.5) {
            // Pair (0 better, 1 worse) is misordered; raise the better score.
            let c = LossConfig::default();
            let a = ranknet(&[ranked(&[better, worse, other], &[1, 2, 3])], &c).unwrap();
            let b = ranknet(&[ranked(&[better + delta, worse, other], &[1, 2, 3])], &c).unwrap();
            prop_assert!(b < a);
        }
    }

    // Gradient machinery -------------------------------------------------

    fn random_batch(r: &mut rng::Rng, vocab: usize) -> ScoringBatch {
        let n_seq = 6;
        let sequences: Vec<Vec<TokenId>> = (0..n_seq)
            .map(|_| {
                let len = rng::below(r, 5);
                (0..len)
                    .map(|_| rng::below(r, vocab - 1) as TokenId)
                    .collect()
            })
            .collect();
        ScoringBatch {
            sequences,
            infonce: vec![
                InfoNceGroup {
                    query: 0,
                    positive: 1,
                    negatives: vec![2, 3],
                },
                InfoNceGroup {
                    query: 4,
                    positive: 2,
                    negatives: vec![1, 5, 3],
                },
            ],
            ranknet: vec![RankNetGroup {
                query: 5,
                docs: vec![1, 2, 3],
                ranks: vec![2, 1, 3],
            }],
        }
    }

    fn max_rel_error(batch: &ScoringBatch, params: &EncoderParams, c: &LossConfig) -> f64 {
        let (_, g) = loss_gradients(batch, params, c).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let n_table = params.token_table.len();
        for idx in 0..n_table + params.projection.len() {
            let analytic = if idx < n_table {
                g.token_table[idx]
            } else {
                g.projection[idx - n_table]
            };
            let eval = |delta: f64| {
                let mut p = params.clone();
                if idx < n_table {
                    p.token_table[idx] += delta;
                } else {
                    p.projection[idx - n_table] += delta;
                }
                evaluate_loss(batch, &p, c).unwrap().combined
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            if analytic.abs() > 1e-8 {
                worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::seeded(42);
        for seed in 0..5 {
            let params = EncoderParams::init(10, 3, seed);
            let batch = random_batch(&mut r, 10);
            for c in [LossConfig::default(), cfg(1.0, 1.0, 0.5)] {
                let err = max_rel_error(&batch, &params, &c);
                assert!(err < 1e-4, "seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn literal_convention_gradients_match_finite_differences() {
        let mut r = rng::seeded(3);
        let params = EncoderParams::init(10, 3, 17);
        let batch = random_batch(&mut r, 10);
        let c = LossConfig {
            convention: RankNetConvention::Literal,
            ..Default::default()
        };
        assert!(max_rel_error(&batch, &params, &c) < 1e-4);
    }

    #[test]
    fn gradients_are_linear_in_lambda() {
        let mut r = rng::seeded(9);
        let params = EncoderParams::init(12, 4, 2);
        let batch = random_batch(&mut r, 12);
        let full = LossConfig::default();
        let no_rank = LossConfig {
            lambda: 0.0,
            ..full
        };
        let only_rank = LossConfig {
            infonce_weight: 0.0,
            lambda: 1.0,
            ..full
        };
        let (_, g_full) = loss_gradients(&batch, &params, &full).unwrap();
        let (_, g0) = loss_gradients(&batch, &params, &no_rank).unwrap();
        let (_, gr) = loss_gradients(&batch, &params, &only_rank).unwrap();
        for ((a, b), c) in g_full
            .token_table
            .iter()
            .chain(&g_full.projection)
            .zip(g0.token_table.iter().chain(&g0.projection))
            .zip(gr.token_table.iter().chain(&gr.projection))
        {
            assert!((a - (b + full.lambda * c)).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn symmetric_stationary_point_has_zero_gradient() {
        // Identity projection. The query pools to [1/2,0,0]; the two docs pool
        // to [1/2,±1/2,0], mirror images across the query axis, so both scores
        // are equal. Moving the query along its own axis or along the unused
        // third axis cannot change either score, so those gradient components
        // vanish; only the mirror axis (towards the positive) survives.
        let dim = 3;
        let mut table = vec![0.0; 5 * dim];
        let rows: [[f64; 3]; 5] = [
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [1.0, -1.0, 0.0],
            [0.0; 3],
            [0.0; 3],
        ];
        for (t, row) in rows.iter().enumerate() {
            table[t * dim..(t + 1) * dim].copy_from_slice(row);
        }
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let params = EncoderParams::from_parts(5, dim, table, eye).unwrap();
        let batch = ScoringBatch {
            sequences: vec![vec![0], vec![1], vec![2]],
            infonce: vec![InfoNceGroup {
                query: 0,
                positive: 1,
                negatives: vec![2],
            }],
            ranknet: vec![],
        };
        let c = LossConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let (loss, g) = loss_gradients(&batch, &params, &c).unwrap();
        assert!((loss.infonce - 2f64.ln()).abs() < 1e-15);
        let q = &g.token_table[0..dim];
        assert!(q[0].abs() < 1e-12 && q[2].abs() < 1e-12);
        assert!(q[1] < 0.0);
        // Nothing touches the third axis anywhere.
        assert!(g
            .token_table
            .iter()
            .skip(2)
            .step_by(dim)
            .all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn empty_and_zero_norm_batches() {
        let params = EncoderParams::init(8, 2, 0);
        assert_eq!(
            loss_gradients(&ScoringBatch::default(), &params, &LossConfig::default()).unwrap_err(),
            LossError::EmptyBatch
        );
        let zero = EncoderParams::from_parts(4, 2, vec![0.0; 8], vec![0.0; 4]).unwrap();
        let batch = ScoringBatch {
            sequences: vec![vec![0], vec![1]],
            infonce: vec![InfoNceGroup {
                query: 0,
                positive: 1,
                negatives: vec![],
            }],
            ranknet: vec![],
        };
        assert!(matches!(
            evaluate_loss(&batch, &zero, &LossConfig::default()),
            Err(LossError::Linalg(LinalgError::ZeroNorm))
        ));
    }
}
