//! Similar-pair sampling, the multiple-negatives ranking loss, and the
//! similarity-model training loop with encoder freezing.
//!
//! Two loss forms are provided. `literal` excludes the positive term from the
//! denominator, which is unbounded below (an aligned 2-pair batch scores -1);
//! `standard` includes it, giving the usual InfoNCE objective. The default is
//! `standard`; the form in effect is echoed in every training report.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::SimCheckpoint;
use crate::corpus::{Corpus, FunctionRecord};
use crate::cryptoclass::Registry;
use crate::error::{FocError, Result};
use crate::features::OpcodeCategoryMap;
use crate::optimizer::{AdamW, Moments};
use crate::semencoder::PAD_ROW;
use crate::simmodel::{
    backward_prepared, forward_prepared, prepare_function, PreparedFunction, SimGradients,
};
use crate::util::derive_seed;

/// Denominator convention of the ranking loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossForm {
    /// Denominator sums over j != i only.
    LiteralEq5,
    /// Denominator also includes the j = i positive term.
    StandardInfoNce,
}

impl fmt::Display for LossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossForm::LiteralEq5 => write!(f, "literal"),
            LossForm::StandardInfoNce => write!(f, "standard"),
        }
    }
}

impl std::str::FromStr for LossForm {
    type Err = FocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LossForm::LiteralEq5),
            "standard" => Ok(LossForm::StandardInfoNce),
            other => Err(FocError::config(format!(
                "loss form must be 'literal' or 'standard', got '{other}'"
            ))),
        }
    }
}

/// Training settings. Defaults are desk-scale (2,000 steps, batch 32);
/// [`TrainConfig::paper_scale`] selects the reference setup (110,000 steps,
/// batch 128).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub temperature: f64,
    pub loss_form: LossForm,
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            steps: 2000,
            temperature: 0.05,
            loss_form: LossForm::StandardInfoNce,
            freeze_encoder: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn paper_scale() -> Self {
        TrainConfig {
            batch_size: 128,
            steps: 110_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(FocError::config("temperature must be positive"));
        }
        if self.batch_size < 2 {
            return Err(FocError::config("batch size must be at least 2"));
        }
        Ok(())
    }
}

/// Grouping key for similar pairs: same function name within the same file
/// from the same project.
pub fn group_key(record: &FunctionRecord) -> (String, String, String) {
    (
        record.project.clone(),
        record.source_file.clone(),
        record.name.clone(),
    )
}

/// Samples similar pairs from a corpus. A batch never uses the same group
/// twice, and two consecutive identical calls return the same batch; the
/// training loop forks per-step seeds via [`PairSampler::with_seed`].
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    groups: Vec<Vec<&'a FunctionRecord>>,
    pub seed: u64,
}

impl<'a> PairSampler<'a> {
    pub fn new(corpus: &'a Corpus, seed: u64) -> Self {
        let mut by_key: BTreeMap<(String, String, String), Vec<&FunctionRecord>> = BTreeMap::new();
        for record in corpus.records() {
            by_key.entry(group_key(record)).or_default().push(record);
        }
        let groups = by_key.into_values().filter(|members| members.len() >= 2).collect();
        PairSampler { groups, seed }
    }

    /// Number of groups with at least two members.
    pub fn eligible_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PairSampler {
            groups: self.groups.clone(),
            seed,
        }
    }

    /// `n` within-group pairs over `n` pairwise-distinct groups, uniform over
    /// eligible groups given the seed.
    pub fn sample_batch(&self, n: usize) -> Result<Vec<(&'a FunctionRecord, &'a FunctionRecord)>> {
        if n > self.groups.len() {
            return Err(FocError::invalid(format!(
                "batch needs {n} groups with >= 2 members, corpus has only {}",
                self.groups.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let chosen = rand::seq::index::sample(&mut rng, self.groups.len(), n);
        let mut batch = Vec::with_capacity(n);
        for group_idx in chosen.iter() {
            let members = &self.groups[group_idx];
            let picks = rand::seq::index::sample(&mut rng, members.len(), 2);
            batch.push((members[picks.index(0)], members[picks.index(1)]));
        }
        Ok(batch)
    }
}

fn normalized_rows(pairs: &[(Array1<f64>, Array1<f64>)], side: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    let d = pairs[0].0.len();
    let mut rows = Array2::zeros((pairs.len(), d));
    let mut norms = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let v = if side == 0 { &pair.0 } else { &pair.1 };
        let norm = v.dot(v).sqrt();
        if norm == 0.0 {
            return Err(FocError::invalid(format!(
                "embedding {i} (side {side}) is the zero vector; cosine is undefined"
            )));
        }
        rows.row_mut(i).assign(&(v / norm));
        norms.push(norm);
    }
    Ok((rows, norms))
}

fn mnr_terms(
    pairs: &[(Array1<f64>, Array1<f64>)],
    temperature: f64,
    form: LossForm,
) -> Result<(f64, Array2<f64>, Array2<f64>, Array2<f64>, Vec<f64>, Vec<f64>)> {
    let n = pairs.len();
    if n < 2 {
        return Err(FocError::invalid("the ranking loss needs at least 2 pairs"));
    }
    if temperature <= 0.0 {
        return Err(FocError::invalid("temperature must be positive"));
    }
    let (u, u_norms) = normalized_rows(pairs, 0)?;
    let (w, w_norms) = normalized_rows(pairs, 1)?;
    let sims = u.dot(&w.t());

    // loss_i = logsumexp_{j in D_i}(s_ij / tau) - s_ii / tau
    let mut total = 0.0;
    // coeff[i][j] = dL/ds_ij
    let mut coeff = Array2::zeros((n, n));
    for i in 0..n {
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..n {
            if form == LossForm::LiteralEq5 && j == i {
                continue;
            }
            max_logit = max_logit.max(sims[(i, j)] / temperature);
        }
        let mut denom = 0.0;
        for j in 0..n {
            if form == LossForm::LiteralEq5 && j == i {
                continue;
            }
            denom += ((sims[(i, j)] / temperature) - max_logit).exp();
        }
        let lse = max_logit + denom.ln();
        total += lse - sims[(i, i)] / temperature;
        for j in 0..n {
            if form == LossForm::LiteralEq5 && j == i {
                continue;
            }
            let p = ((sims[(i, j)] / temperature) - lse).exp();
            coeff[(i, j)] = p / (n as f64 * temperature);
        }
        coeff[(i, i)] -= 1.0 / (n as f64 * temperature);
    }
    Ok((total / n as f64, coeff, u, w, u_norms, w_norms))
}

/// The multiple-negatives ranking loss over a batch of similar pairs,
/// using cosine similarity scaled by the temperature.
pub fn mnr_loss(
    pairs: &[(Array1<f64>, Array1<f64>)],
    temperature: f64,
    form: LossForm,
) -> Result<f64> {
    mnr_terms(pairs, temperature, form).map(|(loss, ..)| loss)
}

/// Loss plus gradients with respect to every `V_i` and `V_i+`.
pub fn mnr_loss_grad(
    pairs: &[(Array1<f64>, Array1<f64>)],
    temperature: f64,
    form: LossForm,
) -> Result<(f64, Vec<(Array1<f64>, Array1<f64>)>)> {
    let (loss, coeff, u, w, u_norms, w_norms) = mnr_terms(pairs, temperature, form)?;
    let n = pairs.len();
    let sims = u.dot(&w.t());

    // d s_ij / d V_i = (w_j - s_ij u_i) / |V_i|; d s_ij / d V_j+ analogous.
    let cw = coeff.dot(&w);
    let ctu = coeff.t().dot(&u);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let a: f64 = (0..n).map(|j| coeff[(i, j)] * sims[(i, j)]).sum();
        let d_vi = (&cw.row(i) - &(&u.row(i) * a)) / u_norms[i];
        let b: f64 = (0..n).map(|k| coeff[(k, i)] * sims[(k, i)]).sum();
        let d_wi = (&ctu.row(i) - &(&w.row(i) * b)) / w_norms[i];
        grads.push((d_vi.to_owned(), d_wi.to_owned()));
    }
    Ok((loss, grads))
}

/// Step-wise trainer over a prepared corpus. Owns the working checkpoint and
/// the optimizer state; [`train_sim`] drives it end to end.
pub struct SimTrainer {
    checkpoint: SimCheckpoint,
    prepared: HashMap<String, PreparedFunction>,
    optimizer: AdamW,
    moments: TrainerMoments,
    config: TrainConfig,
    steps_taken: u64,
}

struct TrainerMoments {
    token_embeddings: Option<Moments>,
    feat_w: Moments,
    feat_b: Moments,
    layers: Vec<Moments>,
    fuse_w: Moments,
    fuse_b: Moments,
}

impl SimTrainer {
    pub fn new(
        corpus: &Corpus,
        mut checkpoint: SimCheckpoint,
        registry: &Registry,
        map: &OpcodeCategoryMap,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let map = if map.has_vocab() {
            map.clone()
        } else {
            checkpoint.category_map(map)?
        };
        let prepared: HashMap<String, PreparedFunction> = corpus
            .records()
            .par_iter()
            .map(|record| {
                prepare_function(record, &checkpoint.encoder.tokenizer, registry, &map, checkpoint.gcn.strict)
                    .map(|prep| (record.id.clone(), prep))
            })
            .collect::<Result<_>>()?;
        checkpoint.encoder.frozen = config.freeze_encoder;
        let moments = TrainerMoments {
            token_embeddings: (!config.freeze_encoder)
                .then(|| Moments::zeros(checkpoint.encoder.embeddings.len())),
            feat_w: Moments::zeros(checkpoint.gcn.feat_w.len()),
            feat_b: Moments::zeros(checkpoint.gcn.feat_b.len()),
            layers: checkpoint.gcn.layers.iter().map(|w| Moments::zeros(w.len())).collect(),
            fuse_w: Moments::zeros(checkpoint.fusion.w.len()),
            fuse_b: Moments::zeros(checkpoint.fusion.b.len()),
        };
        Ok(SimTrainer {
            optimizer: AdamW::new(config.learning_rate, config.weight_decay),
            moments,
            prepared,
            checkpoint,
            config,
            steps_taken: 0,
        })
    }

    pub fn checkpoint(&self) -> &SimCheckpoint {
        &self.checkpoint
    }

    pub fn into_checkpoint(self) -> SimCheckpoint {
        self.checkpoint
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// One optimizer step over a batch of similar pairs. Returns the batch
    /// loss, or the divergence error if it is not finite.
    pub fn step_batch(&mut self, batch: &[(&FunctionRecord, &FunctionRecord)]) -> Result<f64> {
        let mut flat: Vec<&PreparedFunction> = Vec::with_capacity(batch.len() * 2);
        for (a, b) in batch {
            for record in [a, b] {
                flat.push(self.prepared.get(&record.id).ok_or_else(|| {
                    FocError::invalid(format!("record {} was not prepared by this trainer", record.id))
                })?);
            }
        }

        let ckpt = &self.checkpoint;
        let forwards: Vec<_> = flat
            .par_iter()
            .map(|prep| forward_prepared(prep, &ckpt.encoder, &ckpt.gcn, &ckpt.fusion))
            .collect::<Result<Vec<_>>>()?;

        let pairs: Vec<(Array1<f64>, Array1<f64>)> = forwards
            .chunks_exact(2)
            .map(|pair| (pair[0].0.clone(), pair[1].0.clone()))
            .collect();
        let (loss, pair_grads) =
            mnr_loss_grad(&pairs, self.config.temperature, self.config.loss_form)?;
        if !loss.is_finite() {
            return Err(FocError::Diverged {
                step: self.steps_taken as usize,
                loss,
            });
        }

        let mut grads = SimGradients::zeros(
            &ckpt.encoder,
            &ckpt.gcn,
            &ckpt.fusion,
            !self.config.freeze_encoder,
        );
        for (pair_idx, (d_a, d_b)) in pair_grads.iter().enumerate() {
            for (slot, d) in [(0, d_a), (1, d_b)] {
                let flat_idx = pair_idx * 2 + slot;
                backward_prepared(
                    flat[flat_idx],
                    &forwards[flat_idx].1,
                    &ckpt.gcn,
                    &ckpt.fusion,
                    &d.view(),
                    &mut grads,
                );
            }
        }

        self.steps_taken += 1;
        let t = self.steps_taken;
        let opt = self.optimizer;
        let ckpt = &mut self.checkpoint;
        if let (Some(token_grads), Some(moments)) =
            (grads.token_embeddings.as_mut(), self.moments.token_embeddings.as_mut())
        {
            token_grads.row_mut(PAD_ROW).fill(0.0);
            opt.update(
                t,
                ckpt.encoder.embeddings.as_slice_mut().expect("contiguous"),
                token_grads.as_slice().expect("contiguous"),
                moments,
            );
            ckpt.encoder.embeddings.row_mut(PAD_ROW).fill(0.0);
        }
        opt.update(
            t,
            ckpt.gcn.feat_w.as_slice_mut().expect("contiguous"),
            grads.feat_w.as_slice().expect("contiguous"),
            &mut self.moments.feat_w,
        );
        opt.update(
            t,
            ckpt.gcn.feat_b.as_slice_mut().expect("contiguous"),
            grads.feat_b.as_slice().expect("contiguous"),
            &mut self.moments.feat_b,
        );
        for (layer, (grad, moments)) in ckpt
            .gcn
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(self.moments.layers.iter_mut()))
        {
            opt.update(
                t,
                layer.as_slice_mut().expect("contiguous"),
                grad.as_slice().expect("contiguous"),
                moments,
            );
        }
        opt.update(
            t,
            ckpt.fusion.w.as_slice_mut().expect("contiguous"),
            grads.fuse_w.as_slice().expect("contiguous"),
            &mut self.moments.fuse_w,
        );
        opt.update(
            t,
            ckpt.fusion.b.as_slice_mut().expect("contiguous"),
            grads.fuse_b.as_slice().expect("contiguous"),
            &mut self.moments.fuse_b,
        );
        Ok(loss)
    }
}

/// Outcome of a training run: the per-step loss trace plus the effective
/// configuration (the loss form in effect heads every run log).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<(usize, f64)>,
    pub config: TrainConfig,
}

impl TrainReport {
    /// One-line run header naming the loss form, as logged by the CLI.
    pub fn header(&self) -> String {
        format!(
            "loss-form={} tau={} batch={} steps={} lr={} wd={} freeze-encoder={} seed={}",
            self.config.loss_form,
            self.config.temperature,
            self.config.batch_size,
            self.config.steps,
            self.config.learning_rate,
            self.config.weight_decay,
            self.config.freeze_encoder,
            self.config.seed
        )
    }
}

/// Trains the GCN and fusion layers (plus the encoder when not frozen) with
/// Adam and decoupled weight decay, sampling a fresh within-group batch per
/// step. Returns the trained checkpoint and the loss trace.
pub fn train_sim(
    corpus: &Corpus,
    checkpoint: SimCheckpoint,
    registry: &Registry,
    map: &OpcodeCategoryMap,
    config: &TrainConfig,
) -> Result<(SimCheckpoint, TrainReport)> {
    config.validate()?;
    let sampler = PairSampler::new(corpus, config.seed);
    if sampler.eligible_groups() < config.batch_size {
        return Err(FocError::invalid(format!(
            "corpus has {} groups with >= 2 members but the batch needs {}",
            sampler.eligible_groups(),
            config.batch_size
        )));
    }
    let mut trainer = SimTrainer::new(corpus, checkpoint, registry, map, config.clone())?;
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sampler
            .with_seed(derive_seed(config.seed, step as u64))
            .sample_batch(config.batch_size)?;
        let loss = trainer.step_batch(&batch).map_err(|e| match e {
            FocError::Diverged { loss, .. } => FocError::Diverged { step, loss },
            other => other,
        })?;
        trace.push((step, loss));
    }
    Ok((
        trainer.into_checkpoint(),
        TrainReport {
            trace,
            config: config.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::ModelConfig;
    use crate::corpus::{Arch, Bits, Opt};
    use crate::cryptoclass::default_registry;
    use ndarray::array;
    use rand::Rng;

    fn pair(v: Array1<f64>, w: Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        (v, w)
    }

    fn identical_batch(n: usize) -> Vec<(Array1<f64>, Array1<f64>)> {
        let v = array![0.3, -1.0, 2.0];
        (0..n).map(|_| pair(v.clone(), v.clone())).collect()
    }

    #[test]
    fn closed_forms_on_identical_embeddings() {
        for n in [2usize, 3, 8] {
            let batch = identical_batch(n);
            let literal = mnr_loss(&batch, 0.05, LossForm::LiteralEq5).unwrap();
            let standard = mnr_loss(&batch, 0.05, LossForm::StandardInfoNce).unwrap();
            assert!(
                (literal - ((n - 1) as f64).ln()).abs() <= 1e-12,
                "literal N={n}: {literal}"
            );
            assert!(
                (standard - (n as f64).ln()).abs() <= 1e-12,
                "standard N={n}: {standard}"
            );
        }
    }

    #[test]
    fn two_pair_orthogonal_case_at_unit_temperature() {
        let batch = vec![
            pair(array![1.0, 0.0], array![1.0, 0.0]),
            pair(array![0.0, 1.0], array![0.0, 1.0]),
        ];
        let literal = mnr_loss(&batch, 1.0, LossForm::LiteralEq5).unwrap();
        assert!((literal - (-1.0)).abs() <= 1e-12, "literal: {literal}");
        let standard = mnr_loss(&batch, 1.0, LossForm::StandardInfoNce).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((standard - expect).abs() <= 1e-12, "standard: {standard}");
    }

    #[test]
    fn loss_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<_> = (0..4)
            .map(|_| {
                pair(
                    Array1::from_iter((0..5).map(|_| rng.random_range(-1.0..1.0))),
                    Array1::from_iter((0..5).map(|_| rng.random_range(-1.0..1.0))),
                )
            })
            .collect();
        let scaled: Vec<_> = batch
            .iter()
            .map(|(a, b)| pair(a * 17.0, b * 0.003))
            .collect();
        for form in [LossForm::LiteralEq5, LossForm::StandardInfoNce] {
            let l1 = mnr_loss(&batch, 0.05, form).unwrap();
            let l2 = mnr_loss(&scaled, 0.05, form).unwrap();
            assert!((l1 - l2).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let one = identical_batch(1);
        assert!(mnr_loss(&one, 0.05, LossForm::StandardInfoNce).is_err());
        let zeroed = vec![
            pair(array![0.0, 0.0], array![1.0, 0.0]),
            pair(array![1.0, 0.0], array![1.0, 0.0]),
        ];
        assert!(mnr_loss(&zeroed, 0.05, LossForm::StandardInfoNce).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_both_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for form in [LossForm::LiteralEq5, LossForm::StandardInfoNce] {
            let batch: Vec<_> = (0..3)
                .map(|_| {
                    pair(
                        Array1::from_iter((0..4).map(|_| rng.random_range(-1.0..1.0))),
                        Array1::from_iter((0..4).map(|_| rng.random_range(-1.0..1.0))),
                    )
                })
                .collect();
            let (_, grads) = mnr_loss_grad(&batch, 0.1, form).unwrap();
            let h = 1e-5;
            for p in 0..batch.len() {
                for side in 0..2 {
                    for k in 0..4 {
                        let mut up = batch.clone();
                        let mut down = batch.clone();
                        if side == 0 {
                            up[p].0[k] += h;
                            down[p].0[k] -= h;
                        } else {
                            up[p].1[k] += h;
                            down[p].1[k] -= h;
                        }
                        let fd = (mnr_loss(&up, 0.1, form).unwrap()
                            - mnr_loss(&down, 0.1, form).unwrap())
                            / (2.0 * h);
                        let analytic = if side == 0 { grads[p].0[k] } else { grads[p].1[k] };
                        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                        assert!(
                            rel < 1e-4,
                            "{form} pair {p} side {side} [{k}]: {analytic} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    fn grouped_corpus(groups: usize, variants: usize) -> Corpus {
        let mut records = Vec::new();
        for g in 0..groups {
            for v in 0..variants {
                records.push(FunctionRecord {
                    id: format!("g{g}v{v}"),
                    project: "p".into(),
                    binary: format!("bin{v}"),
                    source_file: format!("src/f{g}.c"),
                    name: format!("fn{g}"),
                    arch: Arch::X86,
                    bits: Bits::B64,
                    compiler: "gcc".into(),
                    compiler_version: "11".into(),
                    opt: if v % 2 == 0 { Opt::O0 } else { Opt::O2 },
                    pseudo_code: format!(
                        "int fn{g}(int a{v}) {{ return core{g}(a{v}) ^ mask{g}; }}"
                    ),
                    blocks: vec![
                        vec!["mov".into(), "add".into()],
                        vec![if v % 2 == 0 { "xor".into() } else { "or".into() }, "ret".into()],
                    ],
                    edges: vec![(0, 1)],
                    callees: vec![format!("core{g}")],
                    summary: None,
                });
            }
        }
        Corpus::new(records, "mem").unwrap()
    }

    #[test]
    fn sampler_uses_each_group_once_and_is_deterministic() {
        let corpus = grouped_corpus(2, 2);
        let sampler = PairSampler::new(&corpus, 7);
        assert_eq!(sampler.eligible_groups(), 2);
        let batch = sampler.sample_batch(2).unwrap();
        let keys: std::collections::BTreeSet<_> =
            batch.iter().map(|(a, _)| group_key(a)).collect();
        assert_eq!(keys.len(), 2);
        for (a, b) in &batch {
            assert_eq!(group_key(a), group_key(b));
            assert_ne!(a.id, b.id);
        }
        let again = sampler.sample_batch(2).unwrap();
        let ids = |batch: &[(&FunctionRecord, &FunctionRecord)]| -> Vec<(String, String)> {
            batch.iter().map(|(a, b)| (a.id.clone(), b.id.clone())).collect()
        };
        assert_eq!(ids(&batch), ids(&again));
        assert!(sampler.sample_batch(3).is_err());
    }

    #[test]
    fn batches_never_repeat_a_group() {
        let corpus = grouped_corpus(12, 3);
        let sampler = PairSampler::new(&corpus, 0);
        for s in 0..1000u64 {
            let batch = sampler.with_seed(s).sample_batch(8).unwrap();
            let keys: std::collections::BTreeSet<_> =
                batch.iter().map(|(a, _)| group_key(a)).collect();
            assert_eq!(keys.len(), 8, "seed {s} repeated a group");
        }
    }

    fn tiny_model(corpus: &Corpus) -> (SimCheckpoint, Registry, OpcodeCategoryMap) {
        let registry = default_registry();
        let base = OpcodeCategoryMap::builtin();
        let config = ModelConfig {
            d_sem: 16,
            d_g: 12,
            gcn_layers: 2,
            vocab_size: 256,
            oov_buckets: 16,
            ..Default::default()
        };
        let ckpt = SimCheckpoint::init_from_corpus(&config, corpus, &base, 11).unwrap();
        let map = ckpt.category_map(&base).unwrap();
        (ckpt, registry, map)
    }

    #[test]
    fn training_reduces_loss_on_a_toy_corpus() {
        let corpus = grouped_corpus(20, 4);
        let (ckpt, registry, map) = tiny_model(&corpus);
        let config = TrainConfig {
            batch_size: 8,
            steps: 60,
            seed: 1,
            ..Default::default()
        };
        let (_, report) = train_sim(&corpus, ckpt, &registry, &map, &config).unwrap();
        let first: f64 = report.trace[..10].iter().map(|(_, l)| l).sum::<f64>() / 10.0;
        let last: f64 = report.trace[report.trace.len() - 10..]
            .iter()
            .map(|(_, l)| l)
            .sum::<f64>()
            / 10.0;
        assert!(last < first, "loss did not improve: {first} -> {last}");
        assert!(report.header().contains("loss-form=standard"));
    }

    #[test]
    fn repeated_single_batch_is_monotone_at_first() {
        let corpus = grouped_corpus(8, 2);
        let (ckpt, registry, map) = tiny_model(&corpus);
        let config = TrainConfig {
            batch_size: 4,
            steps: 10,
            seed: 2,
            ..Default::default()
        };
        let sampler = PairSampler::new(&corpus, 2);
        let batch = sampler.sample_batch(4).unwrap();
        let mut trainer = SimTrainer::new(&corpus, ckpt, &registry, &map, config).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let loss = trainer.step_batch(&batch).unwrap();
            assert!(loss <= last + 1e-9, "loss increased: {last} -> {loss}");
            last = loss;
        }
    }

    #[test]
    fn frozen_encoder_stays_bit_identical() {
        let corpus = grouped_corpus(10, 2);
        let (ckpt, registry, map) = tiny_model(&corpus);
        let before = ckpt.encoder.embeddings.clone();
        let config = TrainConfig {
            batch_size: 4,
            steps: 20,
            freeze_encoder: true,
            seed: 3,
            ..Default::default()
        };
        let (trained, _) = train_sim(&corpus, ckpt, &registry, &map, &config).unwrap();
        assert_eq!(trained.encoder.embeddings, before);

        // and the unfrozen encoder does move
        let (ckpt2, registry, map) = tiny_model(&corpus);
        let before2 = ckpt2.encoder.embeddings.clone();
        let config2 = TrainConfig {
            batch_size: 4,
            steps: 20,
            freeze_encoder: false,
            seed: 3,
            ..Default::default()
        };
        let (trained2, _) = train_sim(&corpus, ckpt2, &registry, &map, &config2).unwrap();
        assert_ne!(trained2.encoder.embeddings, before2);
    }
}
