//! The similarity-model forward pass and its exact analytic gradients.
//!
//! Pipeline per function: the semantic encoder pools token embeddings of the
//! pseudo-code; a 5-layer GCN propagates over the attributed CFG and a
//! summation readout collapses node states to one structure vector; the
//! 65-dim cryptographic feature vector is appended; a single linear layer
//! (no activation) fuses the concatenation into a 256-dim embedding.
//!
//! The GCN layer is `h_i <- ReLU( sum_{j in N(i)} (deg_i * deg_j)^(-1/2) *
//! W * h_j )`. By default the adjacency is symmetrized and self-loops are
//! inserted before degrees are computed, which keeps isolated nodes alive and
//! makes edge direction irrelevant; a strict mode omits the self-loops.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Arch, Bits, FunctionRecord, Opt};
use crate::cryptoclass::Registry;
use crate::error::{FocError, Result};
use crate::features::{build_acfg, crypto_features, Acfg, OpcodeCategoryMap, BLOCK_FEATURE_DIM};
use crate::semencoder::{xavier_uniform, SemEncoder, Tokenizer};

/// Output dimension of the fusion layer.
pub const EMBED_DIM: usize = 256;
pub const DEFAULT_D_G: usize = 128;
pub const DEFAULT_GCN_LAYERS: usize = 5;

/// Normalized message-passing structure of one graph: per node, the
/// neighbors it aggregates from with the `(deg_i * deg_j)^(-1/2)`
/// coefficients. Symmetric by construction.
#[derive(Debug, Clone)]
pub struct GraphStructure {
    pub n: usize,
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl GraphStructure {
    /// Builds the structure from directed edges. Duplicate and reciprocal
    /// edges collapse; self-loops are added unless `strict`.
    pub fn build(n: usize, edges: &[(usize, usize)], strict: bool) -> Self {
        let mut adjacency: Vec<std::collections::BTreeSet<usize>> =
            vec![std::collections::BTreeSet::new(); n];
        for &(a, b) in edges {
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        if !strict {
            for (i, set) in adjacency.iter_mut().enumerate() {
                set.insert(i);
            }
        }
        let degrees: Vec<usize> = adjacency.iter().map(|s| s.len()).collect();
        let neighbors = adjacency
            .iter()
            .enumerate()
            .map(|(i, set)| {
                set.iter()
                    .map(|&j| (j, 1.0 / ((degrees[i] * degrees[j]) as f64).sqrt()))
                    .collect()
            })
            .collect();
        GraphStructure { n, neighbors }
    }

    /// `out[i] = sum_j c_ij h[j]`.
    pub fn aggregate(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for i in 0..self.n {
            let mut row = out.row_mut(i);
            for &(j, c) in &self.neighbors[i] {
                row.scaled_add(c, &h.row(j));
            }
        }
        out
    }

    /// Adjoint of [`GraphStructure::aggregate`]: `out[j] = sum_i c_ij d[i]`.
    pub fn aggregate_transpose(&self, d: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(d.raw_dim());
        for i in 0..self.n {
            let row = d.row(i);
            for &(j, c) in &self.neighbors[i] {
                out.row_mut(j).scaled_add(c, &row);
            }
        }
        out
    }
}

/// GCN parameters: the node feature encoder (one linear layer + ReLU mapping
/// 200-dim block vectors into the hidden width) and the per-layer weights.
#[derive(Debug, Clone)]
pub struct GcnParams {
    /// `d_g x 200`.
    pub feat_w: Array2<f64>,
    /// `d_g`.
    pub feat_b: Array1<f64>,
    /// `n_layers` matrices, each `d_g x d_g`.
    pub layers: Vec<Array2<f64>>,
    /// Literal neighbor sum without self-loops when set.
    pub strict: bool,
}

impl GcnParams {
    pub fn init(d_g: usize, n_layers: usize, strict: bool, rng: &mut impl Rng) -> Self {
        GcnParams {
            feat_w: xavier_uniform(d_g, BLOCK_FEATURE_DIM, rng),
            feat_b: Array1::zeros(d_g),
            layers: (0..n_layers).map(|_| xavier_uniform(d_g, d_g, rng)).collect(),
            strict,
        }
    }

    pub fn d_g(&self) -> usize {
        self.feat_w.nrows()
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|x| x.max(0.0));
}

/// Per-layer node states recorded during a GCN forward pass.
/// `states[0]` is the feature-encoder output, `states[l]` the output of
/// layer `l`.
#[derive(Debug, Clone)]
pub struct GcnStates(pub Vec<Array2<f64>>);

fn gcn_forward_internal(
    x: &Array2<f64>,
    structure: &GraphStructure,
    params: &GcnParams,
) -> (Array1<f64>, GcnStates) {
    let mut h = x.dot(&params.feat_w.t());
    for mut row in h.rows_mut() {
        row += &params.feat_b;
    }
    relu_inplace(&mut h);
    let mut states = vec![h];
    for w in &params.layers {
        let aggregated = structure.aggregate(states.last().expect("non-empty"));
        let mut next = aggregated.dot(&w.t());
        relu_inplace(&mut next);
        states.push(next);
    }
    let last = states.last().expect("non-empty");
    let readout = last.sum_axis(ndarray::Axis(0));
    (readout, GcnStates(states))
}

fn acfg_inputs(acfg: &Acfg) -> Result<Array2<f64>> {
    if acfg.node_count() == 0 {
        return Err(FocError::invalid("cannot run the GCN on an empty graph"));
    }
    let n = acfg.node_count();
    let mut x = Array2::zeros((n, BLOCK_FEATURE_DIM));
    for (i, features) in acfg.node_features.iter().enumerate() {
        if features.len() != BLOCK_FEATURE_DIM {
            return Err(FocError::invalid(format!(
                "node {i}: feature dimension {} != {BLOCK_FEATURE_DIM}",
                features.len()
            )));
        }
        for (j, &v) in features.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Graph-level structure embedding: feature-encode nodes, propagate through
/// all layers, and sum the final node states.
pub fn gcn_forward(acfg: &Acfg, params: &GcnParams) -> Result<Array1<f64>> {
    let x = acfg_inputs(acfg)?;
    let structure = GraphStructure::build(acfg.node_count(), &acfg.edges, params.strict);
    Ok(gcn_forward_internal(&x, &structure, params).0)
}

/// Like [`gcn_forward`] but also returns every layer's node states, for
/// layer-by-layer comparison against a dense oracle.
pub fn gcn_forward_states(acfg: &Acfg, params: &GcnParams) -> Result<(Array1<f64>, GcnStates)> {
    let x = acfg_inputs(acfg)?;
    let structure = GraphStructure::build(acfg.node_count(), &acfg.edges, params.strict);
    Ok(gcn_forward_internal(&x, &structure, params))
}

/// Fusion layer: a single linear map over the concatenated semantic,
/// structural, and cryptographic vectors. No activation.
#[derive(Debug, Clone)]
pub struct FusionParams {
    /// `EMBED_DIM x (d_sem + d_g + crypto_dim)`.
    pub w: Array2<f64>,
    /// `EMBED_DIM`.
    pub b: Array1<f64>,
}

impl FusionParams {
    pub fn init(input_dim: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            w: xavier_uniform(EMBED_DIM, input_dim, rng),
            b: Array1::zeros(EMBED_DIM),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Fuses the three source vectors into the function embedding.
pub fn fuse(
    v_sem: &ArrayView1<f64>,
    v_struct: &ArrayView1<f64>,
    v_crypto: &ArrayView1<f64>,
    params: &FusionParams,
) -> Result<Array1<f64>> {
    let total = v_sem.len() + v_struct.len() + v_crypto.len();
    if total != params.input_dim() {
        return Err(FocError::model(format!(
            "fusion input dimension mismatch: {total} != {}",
            params.input_dim()
        )));
    }
    let mut concat = Array1::zeros(total);
    concat.slice_mut(ndarray::s![..v_sem.len()]).assign(v_sem);
    concat
        .slice_mut(ndarray::s![v_sem.len()..v_sem.len() + v_struct.len()])
        .assign(v_struct);
    concat
        .slice_mut(ndarray::s![v_sem.len() + v_struct.len()..])
        .assign(v_crypto);
    Ok(params.w.dot(&concat) + &params.b)
}

/// Metadata snapshot carried alongside every embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub arch: Arch,
    pub bits: Bits,
    pub compiler: String,
    pub compiler_version: String,
    pub opt: Opt,
    pub project: String,
    pub binary: String,
    pub name: String,
}

impl EmbeddingMeta {
    pub fn of(record: &FunctionRecord) -> Self {
        EmbeddingMeta {
            arch: record.arch,
            bits: record.bits,
            compiler: record.compiler.clone(),
            compiler_version: record.compiler_version.clone(),
            opt: record.opt,
            project: record.project.clone(),
            binary: record.binary.clone(),
            name: record.name.clone(),
        }
    }
}

/// A 256-dim function embedding with identity and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionEmbedding {
    pub id: String,
    pub meta: EmbeddingMeta,
    pub vector: Vec<f64>,
}

/// Featurized inputs of one function, cached so training steps only repeat
/// the parameterized part of the forward pass.
#[derive(Debug, Clone)]
pub struct PreparedFunction {
    pub id: String,
    pub meta: EmbeddingMeta,
    pub token_ids: Vec<usize>,
    /// `n x 200` block features.
    pub x: Array2<f64>,
    pub structure: GraphStructure,
    /// Function-level cryptographic features.
    pub crypto: Array1<f64>,
}

/// Featurizes a record against a tokenizer, registry, and category map with
/// installed vocabularies.
pub fn prepare_function(
    record: &FunctionRecord,
    tokenizer: &Tokenizer,
    registry: &Registry,
    map: &OpcodeCategoryMap,
    strict: bool,
) -> Result<PreparedFunction> {
    let acfg = build_acfg(record, map)?;
    let x = acfg_inputs(&acfg)?;
    let structure = GraphStructure::build(acfg.node_count(), &acfg.edges, strict);
    Ok(PreparedFunction {
        id: record.id.clone(),
        meta: EmbeddingMeta::of(record),
        token_ids: tokenizer.tokenize(&record.pseudo_code),
        x,
        structure,
        crypto: Array1::from(crypto_features(record, registry)),
    })
}

/// Which fusion inputs to zero out (ablation studies).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub zero_semantic: bool,
    pub zero_structure: bool,
    pub zero_crypto: bool,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub v_sem: Array1<f64>,
    pub states: GcnStates,
    pub concat: Array1<f64>,
}

/// Forward pass over prepared inputs, recording intermediate states.
pub fn forward_prepared(
    prep: &PreparedFunction,
    encoder: &SemEncoder,
    gcn: &GcnParams,
    fusion: &FusionParams,
) -> Result<(Array1<f64>, ForwardTrace)> {
    let v_sem = encoder.encode_ids(&prep.token_ids);
    let (v_struct, states) = gcn_forward_internal(&prep.x, &prep.structure, gcn);
    let embedding = fuse(&v_sem.view(), &v_struct.view(), &prep.crypto.view(), fusion)?;
    let mut concat = Array1::zeros(v_sem.len() + v_struct.len() + prep.crypto.len());
    concat.slice_mut(ndarray::s![..v_sem.len()]).assign(&v_sem);
    concat
        .slice_mut(ndarray::s![v_sem.len()..v_sem.len() + v_struct.len()])
        .assign(&v_struct);
    concat
        .slice_mut(ndarray::s![v_sem.len() + v_struct.len()..])
        .assign(&prep.crypto);
    Ok((
        embedding,
        ForwardTrace {
            v_sem,
            states,
            concat,
        },
    ))
}

/// Forward pass without a trace, optionally zeroing fusion inputs.
pub fn forward_ablated(
    prep: &PreparedFunction,
    encoder: &SemEncoder,
    gcn: &GcnParams,
    fusion: &FusionParams,
    ablation: Ablation,
) -> Result<Array1<f64>> {
    let v_sem = if ablation.zero_semantic {
        Array1::zeros(encoder.d_sem())
    } else {
        encoder.encode_ids(&prep.token_ids)
    };
    let v_struct = if ablation.zero_structure {
        Array1::zeros(gcn.d_g())
    } else {
        gcn_forward_internal(&prep.x, &prep.structure, gcn).0
    };
    let v_crypto = if ablation.zero_crypto {
        Array1::zeros(prep.crypto.len())
    } else {
        prep.crypto.clone()
    };
    fuse(&v_sem.view(), &v_struct.view(), &v_crypto.view(), fusion)
}

/// Gradient accumulators for every trainable tensor. `token_embeddings` is
/// absent when the encoder is frozen, honoring the freezing contract.
#[derive(Debug, Clone)]
pub struct SimGradients {
    pub token_embeddings: Option<Array2<f64>>,
    pub feat_w: Array2<f64>,
    pub feat_b: Array1<f64>,
    pub layers: Vec<Array2<f64>>,
    pub fuse_w: Array2<f64>,
    pub fuse_b: Array1<f64>,
}

impl SimGradients {
    pub fn zeros(
        encoder: &SemEncoder,
        gcn: &GcnParams,
        fusion: &FusionParams,
        include_encoder: bool,
    ) -> Self {
        SimGradients {
            token_embeddings: include_encoder.then(|| Array2::zeros(encoder.embeddings.raw_dim())),
            feat_w: Array2::zeros(gcn.feat_w.raw_dim()),
            feat_b: Array1::zeros(gcn.feat_b.raw_dim()),
            layers: gcn.layers.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            fuse_w: Array2::zeros(fusion.w.raw_dim()),
            fuse_b: Array1::zeros(fusion.b.raw_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &SimGradients) {
        if let (Some(mine), Some(theirs)) =
            (self.token_embeddings.as_mut(), other.token_embeddings.as_ref())
        {
            *mine += theirs;
        }
        self.feat_w += &other.feat_w;
        self.feat_b += &other.feat_b;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
        self.fuse_w += &other.fuse_w;
        self.fuse_b += &other.fuse_b;
    }
}

/// Reverse-mode gradients for one function given the upstream gradient of
/// its embedding. Accumulates into `grads`; the encoder contribution is
/// skipped when `grads.token_embeddings` is `None`.
pub fn backward_prepared(
    prep: &PreparedFunction,
    trace: &ForwardTrace,
    gcn: &GcnParams,
    fusion: &FusionParams,
    d_embedding: &ArrayView1<f64>,
    grads: &mut SimGradients,
) {
    // Fusion: V = W c + b.
    for (i, &g) in d_embedding.iter().enumerate() {
        if g != 0.0 {
            grads.fuse_w.row_mut(i).scaled_add(g, &trace.concat.view());
        }
        grads.fuse_b[i] += g;
    }
    let d_concat = fusion.w.t().dot(d_embedding);

    let d_sem_len = trace.v_sem.len();
    let d_g = gcn.d_g();
    let d_v_sem = d_concat.slice(ndarray::s![..d_sem_len]);
    let d_v_struct = d_concat.slice(ndarray::s![d_sem_len..d_sem_len + d_g]);

    // Encoder: v_sem is the mean of the token rows.
    if let Some(token_grads) = grads.token_embeddings.as_mut() {
        if !prep.token_ids.is_empty() {
            let scale = 1.0 / prep.token_ids.len() as f64;
            for &row in &prep.token_ids {
                token_grads.row_mut(row).scaled_add(scale, &d_v_sem);
            }
        }
    }

    // Readout: every node of the last layer receives d_v_struct.
    let n = prep.structure.n;
    let mut d_h = Array2::zeros((n, d_g));
    for i in 0..n {
        d_h.row_mut(i).assign(&d_v_struct);
    }

    // GCN layers, last to first: h = ReLU(A(h_prev) W^T).
    let states = &trace.states.0;
    for (l, w) in gcn.layers.iter().enumerate().rev() {
        let output = &states[l + 1];
        let mut d_pre = d_h;
        d_pre.zip_mut_with(output, |g, &o| {
            if o <= 0.0 {
                *g = 0.0;
            }
        });
        let aggregated = prep.structure.aggregate(&states[l]);
        grads.layers[l] += &d_pre.t().dot(&aggregated);
        let d_aggregated = d_pre.dot(w);
        d_h = prep.structure.aggregate_transpose(&d_aggregated);
    }

    // Feature encoder: h0 = ReLU(X feat_w^T + feat_b).
    let h0 = &states[0];
    let mut d_pre0 = d_h;
    d_pre0.zip_mut_with(h0, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    grads.feat_w += &d_pre0.t().dot(&prep.x);
    grads.feat_b += &d_pre0.sum_axis(ndarray::Axis(0));
}

/// The full composition: featurize a record and produce its embedding.
pub fn embed_function(
    record: &FunctionRecord,
    encoder: &SemEncoder,
    gcn: &GcnParams,
    fusion: &FusionParams,
    registry: &Registry,
    map: &OpcodeCategoryMap,
) -> Result<FunctionEmbedding> {
    let prep = prepare_function(record, &encoder.tokenizer, registry, map, gcn.strict)?;
    let (embedding, _) = forward_prepared(&prep, encoder, gcn, fusion)?;
    Ok(FunctionEmbedding {
        id: prep.id,
        meta: prep.meta,
        vector: embedding.to_vec(),
    })
}
