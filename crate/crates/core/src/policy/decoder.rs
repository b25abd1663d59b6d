use super::adapter::EtaAdapter;
use super::encoder::Embeddings;
use super::params::PolicyParams;
use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::domain::{locality_distances, RolloutState, Task};
use crate::error::Result;

/// Scalar dynamic feature fed to the query: remaining capacity (CVRP),
/// remaining length budget (OP) or outstanding prize (PCTSP).
pub fn state_feature(state: &RolloutState<'_>) -> f64 {
    let inst = state.instance();
    match inst.task {
        Task::Tsp => 0.0,
        Task::Cvrp => state.remaining_capacity(),
        Task::Op => inst.max_length.unwrap() - state.traveled(),
        Task::Pctsp => (inst.min_prize.unwrap() - state.collected_prize()).max(0.0),
    }
}

/// Everything the decoder needs from one state, plus the action taken.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub anchor: Option<usize>,
    pub last: Option<usize>,
    pub state: f64,
    /// `true` marks an excluded node.
    pub masked: Vec<bool>,
    pub dist: Vec<f64>,
    pub action: usize,
}

impl StepRecord {
    /// Snapshot a non-terminal state. `action` is left at 0.
    pub fn observe(state: &RolloutState<'_>) -> Result<Self> {
        let masked = state.feasible_mask()?.into_iter().map(|f| !f).collect();
        Ok(StepRecord {
            anchor: state.anchor(),
            last: state.current(),
            state: state_feature(state),
            masked,
            dist: locality_distances(state),
            action: 0,
        })
    }

    pub fn feasible_count(&self) -> usize {
        self.masked.iter().filter(|m| !**m).count()
    }
}

/// Per-instance decoder precomputation. Keys are pre-scaled by `1/√d`, and
/// the glimpse output projection is folded into the values.
#[derive(Clone, Copy, Debug)]
pub struct DecoderCache {
    hk: Var,
    k: Var,
    vo: Var,
    mean_k: Var,
    state_k: Option<Var>,
    n: usize,
    clip_c: f64,
}

impl DecoderCache {
    /// `bound` must hold at least the decoder tensors of `p`.
    pub fn prepare(tape: &mut Tape, p: &PolicyParams, bound: &Bound, h: Var) -> Result<Self> {
        let ids = &p.ids;
        let d = p.config().embed_dim;
        let inv = 1.0 / (d as f64).sqrt();
        let n = tape.value(h).rows();
        let k = tape.matmul(h, bound.var(ids.dec_k))?;
        let k = tape.scale(k, inv);
        let v = tape.matmul(h, bound.var(ids.dec_v))?;
        let vo = tape.matmul(v, bound.var(ids.dec_o))?;
        let hk = tape.matmul_nt(h, k)?;
        let mean = tape.mean_rows(h);
        let mean_k = tape.matmul_nt(mean, k)?;
        let state_k = match ids.dec_state {
            Some(ws) => Some(tape.matmul_nt(bound.var(ws), k)?),
            None => None,
        };
        Ok(DecoderCache {
            hk,
            k,
            vo,
            mean_k,
            state_k,
            n,
            clip_c: p.config().clip_c,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Biased, masked-later logits `C·tanh(q*·Kᵀ/√d) − α·dist`, one row per
    /// record.
    pub fn logits(
        &self,
        tape: &mut Tape,
        adapter: Option<(&EtaAdapter, &Bound)>,
        rows: &[&StepRecord],
        alpha: f64,
    ) -> Result<Var> {
        let n = self.n;
        let mask = flat_mask(rows);
        let anchors: Vec<usize> = rows.iter().map(|r| r.anchor.unwrap_or(0)).collect();
        let lasts: Vec<usize> = rows.iter().map(|r| r.last.unwrap_or(0)).collect();
        let ua = tape.gather_rows(self.hk, &anchors)?;
        let ul = tape.gather_rows(self.hk, &lasts)?;
        let mut u = tape.add(ua, ul)?;
        if rows.iter().any(|r| r.last.is_none()) {
            // no node chosen yet: the query is the graph mean alone
            let keep: Vec<f64> = rows
                .iter()
                .flat_map(|r| std::iter::repeat(if r.last.is_some() { 1.0 } else { 0.0 }).take(n))
                .collect();
            let keep = tape.constant(Tensor::from_parts(vec![rows.len(), n], keep));
            u = tape.mul(u, keep)?;
        }
        u = tape.add(u, self.mean_k)?;
        if let Some(sk) = self.state_k {
            let s = tape.constant(Tensor::from_parts(
                vec![rows.len(), 1],
                rows.iter().map(|r| r.state).collect(),
            ));
            let su = tape.matmul(s, sk)?;
            u = tape.add(u, su)?;
        }
        let u = tape.tanh(u);
        let u = tape.scale(u, self.clip_c);
        let a = tape.softmax_temp(u, 1.0, Some(&mask))?;
        let mut g = tape.matmul(a, self.vo)?;
        if let Some((ad, b)) = adapter {
            g = ad.apply_on_tape(tape, b, g)?;
        }
        let u = tape.matmul_nt(g, self.k)?;
        let u = tape.tanh(u);
        let mut u = tape.scale(u, self.clip_c);
        if alpha != 0.0 {
            let bias: Vec<f64> = rows
                .iter()
                .flat_map(|r| r.dist.iter().map(|d| alpha * d))
                .collect();
            let bias = tape.constant(Tensor::from_parts(vec![rows.len(), n], bias));
            u = tape.sub(u, bias)?;
        }
        Ok(u)
    }

    /// Row-wise `log p(·|s)` under temperature `temp`.
    pub fn log_probs(
        &self,
        tape: &mut Tape,
        adapter: Option<(&EtaAdapter, &Bound)>,
        rows: &[&StepRecord],
        alpha: f64,
        temp: f64,
    ) -> Result<Var> {
        let u = self.logits(tape, adapter, rows, alpha)?;
        tape.log_softmax_temp(u, temp, Some(&flat_mask(rows)))
    }

    /// `Σ_r w_r · log p(action_r | s_r)`.
    pub fn weighted_log_likelihood(
        &self,
        tape: &mut Tape,
        adapter: Option<(&EtaAdapter, &Bound)>,
        rows: &[&StepRecord],
        weights: &[f64],
        alpha: f64,
        temp: f64,
    ) -> Result<Var> {
        let lp = self.log_probs(tape, adapter, rows, alpha, temp)?;
        let actions: Vec<usize> = rows.iter().map(|r| r.action).collect();
        let picked = tape.pick_per_row(lp, &actions)?;
        tape.weighted_sum(picked, weights)
    }
}

fn flat_mask(rows: &[&StepRecord]) -> Vec<bool> {
    rows.iter().flat_map(|r| r.masked.iter().copied()).collect()
}

/// Action probabilities for one state. Masked entries are exactly zero.
pub fn decode_step(
    params: &PolicyParams,
    emb: &Embeddings,
    state: &RolloutState<'_>,
    alpha: f64,
    temperature: f64,
    adapter: Option<&EtaAdapter>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pb = params.params().bind_ids(&mut tape, &params.decoder_ids(), false);
    let ab = adapter.map(|a| a.params().bind(&mut tape, false));
    let h = tape.constant(emb.h.clone());
    let cache = DecoderCache::prepare(&mut tape, params, &pb, h)?;
    let rec = StepRecord::observe(state)?;
    let u = cache.logits(&mut tape, adapter.zip(ab.as_ref()), &[&rec], alpha)?;
    let p = tape.softmax_temp(u, temperature, Some(&rec.masked))?;
    Ok(tape.value(p).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate, Instance};
    use crate::policy::ModelConfig;

    fn small(task: Task) -> PolicyParams {
        let cfg = ModelConfig {
            embed_dim: 16,
            heads: 4,
            layers: 1,
            ff_dim: 32,
            ..ModelConfig::new(task)
        };
        PolicyParams::new(cfg, &mut crate::rng::rng_from(11)).unwrap()
    }

    #[test]
    fn single_feasible_node_gets_all_mass() {
        let p = small(Task::Tsp);
        let inst = generate(Task::Tsp, 4, 1).unwrap();
        let emb = super::super::encode(&p, &inst).unwrap();
        let mut s = RolloutState::new(&inst);
        for a in [2, 0, 3] {
            s.step(a).unwrap();
        }
        for (alpha, t) in [(0.0, 1.0), (3.0, 0.1), (0.5, 7.0)] {
            let probs = decode_step(&p, &emb, &s, alpha, t, None).unwrap();
            assert_eq!(probs, vec![0.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn probabilities_are_normalized_and_masked() {
        let p = small(Task::Cvrp);
        let inst = generate(Task::Cvrp, 9, 3).unwrap();
        let emb = super::super::encode(&p, &inst).unwrap();
        let mut s = RolloutState::new(&inst);
        s.step(4).unwrap();
        let mask = s.feasible_mask().unwrap();
        let probs = decode_step(&p, &emb, &s, 0.7, 0.8, None).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pr, ok) in probs.iter().zip(mask) {
            if !ok {
                assert_eq!(*pr, 0.0);
            } else {
                assert!(*pr > 0.0);
            }
        }
    }

    #[test]
    fn locality_bias_ratio_between_twins() {
        let p = small(Task::Tsp);
        // rows 1 and 2 identical, so their unbiased logits coincide
        let h = Tensor::matrix(
            3,
            16,
            (0..48).map(|i| ((i % 16) as f64).sin() * if i < 16 { 0.3 } else { 1.0 }).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let pb = p.params().bind(&mut tape, false);
        let hv = tape.constant(h);
        let cache = DecoderCache::prepare(&mut tape, &p, &pb, hv).unwrap();
        let rec = StepRecord {
            anchor: Some(0),
            last: Some(0),
            state: 0.0,
            masked: vec![true, false, false],
            dist: vec![0.0, 0.2, 0.4],
            action: 1,
        };
        let lp = cache.log_probs(&mut tape, None, &[&rec], 1.0, 1.0).unwrap();
        let v = tape.value(lp);
        assert!(((v.at(0, 1) - v.at(0, 2)) - 0.2).abs() < 1e-12);
        let lp0 = cache.log_probs(&mut tape, None, &[&rec], 0.0, 1.0).unwrap();
        assert!((tape.value(lp0).at(0, 1) - tape.value(lp0).at(0, 2)).abs() < 1e-12);
    }

    #[test]
    fn fresh_tsp_state_is_a_distribution() {
        let p = small(Task::Tsp);
        let inst = Instance::tsp(vec![[0.1, 0.2], [0.9, 0.4], [0.3, 0.3]]);
        let emb = super::super::encode(&p, &inst).unwrap();
        let probs = decode_step(&p, &emb, &RolloutState::new(&inst), 0.0, 1.0, None).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
