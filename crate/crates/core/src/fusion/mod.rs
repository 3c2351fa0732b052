//! Slow-to-fast path: encode retrieved experiences, attend from visual view
//! features to them, fuse the result back into the views, and score actions
//! on the fused features. [`Graph`] records the computation for gradients.

mod graph;

pub use graph::{Graph, MacTally, StepInput};
pub(crate) use graph::score_rows as graph_score_rows;

use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::env::Instruction;
use crate::error::{invalid, Error, Result};
use crate::explib::Experience;
use crate::policy::{encode_instruction, score_actions, softmax, PolicyParams, TopoMap};
use crate::tokens::token_bucket;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `buckets x d/3` tables for S_t, C_s and T_n.
    pub s_table: Array2<f64>,
    pub c_table: Array2<f64>,
    pub t_table: Array2<f64>,
    pub out_proj: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub heads: usize,
    pub enc: EncoderParams,
    /// `d x D`
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    /// `D x (D + d)`
    pub w_fusion: Array2<f64>,
    pub b_fusion: Array1<f64>,
}

impl FusionParams {
    pub fn zeros(dim: usize, exp_dim: usize, heads: usize, buckets: usize) -> Result<Self> {
        if exp_dim == 0 || exp_dim % 3 != 0 {
            return Err(invalid(format!("experience dim {exp_dim} must be a positive multiple of 3")));
        }
        if heads == 0 || exp_dim % heads != 0 {
            return Err(invalid(format!("experience dim {exp_dim} must be divisible by {heads} heads")));
        }
        let block = exp_dim / 3;
        Ok(Self {
            heads,
            enc: EncoderParams {
                s_table: Array2::zeros((buckets, block)),
                c_table: Array2::zeros((buckets, block)),
                t_table: Array2::zeros((buckets, block)),
                out_proj: Array2::zeros((exp_dim, exp_dim)),
            },
            w_q: Array2::zeros((exp_dim, dim)),
            w_k: Array2::zeros((exp_dim, exp_dim)),
            w_v: Array2::zeros((exp_dim, exp_dim)),
            w_o: Array2::zeros((exp_dim, exp_dim)),
            w_fusion: Array2::zeros((dim, dim + exp_dim)),
            b_fusion: Array1::zeros(dim),
        })
    }

    pub fn exp_dim(&self) -> usize {
        self.w_k.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w_q.ncols()
    }

    pub fn head_dim(&self) -> usize {
        self.exp_dim() / self.heads
    }
}

/// Hash buckets of the three embedded experience fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceTokens {
    pub s: Vec<usize>,
    pub c: Vec<usize>,
    pub t: Vec<usize>,
}

impl ExperienceTokens {
    pub fn of(e: &Experience, buckets: usize) -> Self {
        let b = |set: &crate::tokens::TokenSet| set.iter().map(|t| token_bucket(t, buckets)).collect();
        Self { s: b(&e.scene_type), c: b(&e.context), t: b(&e.strategy) }
    }
}

/// Concatenated field means, before the output projection.
pub(crate) fn encoder_input(enc: &EncoderParams, tok: &ExperienceTokens) -> Array1<f64> {
    let block = enc.block();
    let mut x = Array1::zeros(3 * block);
    for (k, (table, ids)) in [(&enc.s_table, &tok.s), (&enc.c_table, &tok.c), (&enc.t_table, &tok.t)].into_iter().enumerate() {
        x.slice_mut(s![k * block..(k + 1) * block]).assign(&crate::policy::mean_rows(table, ids));
    }
    x
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `relu(out_proj * [mean S_t; mean C_s; mean T_n])`, empty fields giving
/// zero blocks.
pub fn encode_experience(enc: &EncoderParams, e: &Experience) -> Array1<f64> {
    let tok = ExperienceTokens::of(e, enc.s_table.nrows());
    enc.out_proj.dot(&encoder_input(enc, &tok)).mapv(relu)
}

/// Multi-head scaled dot-product attention with queries from `f_v` and keys
/// and values from `f_e`. Returns the projected output and the weights
/// `heads x L x M`.
pub fn attend(fp: &FusionParams, f_v: &Array2<f64>, f_e: &Array2<f64>) -> Result<(Array2<f64>, Array3<f64>)> {
    if f_e.nrows() == 0 {
        return Err(Error::EmptyExperience);
    }
    if f_v.ncols() != fp.dim() || f_e.ncols() != fp.exp_dim() {
        return Err(invalid("attention input dimensions do not match the parameters"));
    }
    let q = f_v.dot(&fp.w_q.t());
    let k = f_e.dot(&fp.w_k.t());
    let v = f_e.dot(&fp.w_v.t());
    let (heads, out) = graph::multi_head(fp.heads, &q, &k, &v, f_e.nrows());
    Ok((heads.dot(&fp.w_o.t()), out))
}

/// `relu(W_fusion [F_v; F_att] + b_fusion)` row by row.
pub fn fuse(fp: &FusionParams, f_v: &Array2<f64>, f_att: &Array2<f64>) -> Result<Array2<f64>> {
    if f_v.nrows() != f_att.nrows() || f_v.ncols() != fp.dim() || f_att.ncols() != fp.exp_dim() {
        return Err(invalid("fusion input dimensions do not match the parameters"));
    }
    let x = ndarray::concatenate(Axis(1), &[f_v.view(), f_att.view()]).expect("row counts agree");
    Ok((x.dot(&fp.w_fusion.t()) + &fp.b_fusion).mapv(relu))
}

/// Action distribution over the map's action space and the navigation
/// confidence (its largest probability).
pub fn enhanced_decision(
    params: &PolicyParams,
    f_fused: &Array2<f64>,
    instr: &Instruction,
    map: &TopoMap,
) -> Result<(Array1<f64>, f64)> {
    let u = encode_instruction(params, instr)?;
    let scores = score_actions(params, f_fused, &u, map)?;
    let dist = softmax(&scores);
    let confidence = dist.iter().copied().fold(0.0, f64::max);
    Ok((dist, confidence))
}
