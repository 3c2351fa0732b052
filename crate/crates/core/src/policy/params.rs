use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayViewMut1, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fusion::{EncoderParams, FusionParams};
use crate::tokens::{token_bucket, FeatureLayout, SceneType, COLORS, OBJECTS};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_EXP_DIM: usize = 48;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_BUCKETS: usize = 1024;

/// Every learnable tensor of the fast policy, including the fusion path.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// `buckets x D`, indexed by hashed token.
    pub token_embed: Array2<f64>,
    pub instr_proj: Array2<f64>,
    pub cand_proj: Array2<f64>,
    pub scale_gate: f64,
    pub stop_bias: f64,
    pub fusion: FusionParams,
}

/// Hand-set weights that make the untrained policy follow instruction words
/// and favour candidates whose landmarks appear in retrieved strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub instr_scale: f64,
    /// Extra weight of object words in the instruction vector.
    pub object_gain: f64,
    /// Extra weight of colour words in the instruction vector.
    pub color_gain: f64,
    /// Fusion gain on retrieved strategy words.
    pub strategy_gain: f64,
    /// Score added per matched strategy landmark.
    pub match_weight: f64,
    /// Stop score added when the view shows an instructed object that the
    /// strategy also names.
    pub stop_match: f64,
    pub visited_penalty: f64,
    pub scale_gate: f64,
    pub stop_bias: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            instr_scale: 15.0,
            object_gain: 4.0,
            color_gain: 4.0,
            strategy_gain: 5.0,
            match_weight: 2.0,
            stop_match: 3.0,
            visited_penalty: 1.0,
            scale_gate: 2.0,
            stop_bias: -5.5,
        }
    }
}

/// A named parameter tensor with its shape, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "dualnav-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub exp_dim: usize,
    pub heads: usize,
    pub buckets: usize,
    pub tensors: Vec<NamedTensor>,
}

impl PolicyParams {
    pub fn zeros(dim: usize, exp_dim: usize, heads: usize, buckets: usize) -> Result<Self> {
        if dim == 0 || buckets == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        Ok(Self {
            token_embed: Array2::zeros((buckets, dim)),
            instr_proj: Array2::zeros((dim, dim)),
            cand_proj: Array2::zeros((dim, dim)),
            scale_gate: 0.0,
            stop_bias: 0.0,
            fusion: FusionParams::zeros(dim, exp_dim, heads, buckets)?,
        })
    }

    /// Default shapes, all zero.
    pub fn default_zeros() -> Self {
        Self::zeros(DEFAULT_DIM, DEFAULT_EXP_DIM, DEFAULT_HEADS, DEFAULT_BUCKETS).expect("default shapes are valid")
    }

    /// Uniform entries in `[-scale, scale]`.
    pub fn random(dim: usize, exp_dim: usize, heads: usize, buckets: usize, seed: u64, scale: f64) -> Result<Self> {
        let mut p = Self::zeros(dim, exp_dim, heads, buckets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.visit_mut(|_, mut t| t.mapv_inplace(|_| rng.random_range(-scale..=scale)));
        Ok(p)
    }

    /// Structured initialisation over the feature slot layout. Needs
    /// `dim >= 64`, `exp_dim` divisible by 3 with blocks of at least 16.
    pub fn prior(dim: usize, exp_dim: usize, heads: usize, buckets: usize, cfg: &PriorConfig) -> Result<Self> {
        let layout = FeatureLayout::new(dim).ok_or_else(|| invalid("prior needs dim >= 64"))?;
        if exp_dim % 3 != 0 || exp_dim / 3 < OBJECTS.len() {
            return Err(invalid("prior needs exp_dim = 3k with k >= 16"));
        }
        let mut p = Self::zeros(dim, exp_dim, heads, buckets)?;
        let (bias, visited) = (layout.bias(), layout.visited());

        let mut vocab: Vec<&str> = OBJECTS.iter().chain(COLORS.iter()).copied().collect();
        for st in SceneType::ALL {
            vocab.extend(st.regions());
        }
        for w in vocab {
            let mut row = p.token_embed.row_mut(token_bucket(w, buckets));
            row[layout.slot(w)] = 1.0;
            row[bias] = 1.0;
        }
        for k in 0..FeatureLayout::MATCH {
            let gain = match k {
                _ if k < FeatureLayout::COLOR => cfg.object_gain,
                _ if k < FeatureLayout::REGION => cfg.color_gain,
                _ => 1.0,
            };
            p.instr_proj[[k, k]] = cfg.instr_scale * gain;
            p.cand_proj[[k, k]] = 1.0;
        }
        p.instr_proj[[bias, bias]] = cfg.instr_scale;
        for i in 0..OBJECTS.len() {
            p.cand_proj[[bias, FeatureLayout::MATCH + i]] = cfg.match_weight;
            p.instr_proj[[FeatureLayout::MATCH + i, FeatureLayout::OBJECT + i]] = cfg.instr_scale * cfg.stop_match;
        }
        p.cand_proj[[bias, visited]] = -cfg.visited_penalty;
        p.scale_gate = cfg.scale_gate;
        p.stop_bias = cfg.stop_bias;

        let f = &mut p.fusion;
        let block = exp_dim / 3;
        for (i, o) in OBJECTS.iter().enumerate() {
            f.enc.t_table[[token_bucket(o, buckets), i]] = 1.0;
        }
        for k in 0..exp_dim {
            f.enc.out_proj[[k, k]] = 1.0;
            f.w_v[[k, k]] = 1.0;
            f.w_o[[k, k]] = 1.0;
        }
        for k in 0..dim {
            if !(FeatureLayout::MATCH..FeatureLayout::MATCH + OBJECTS.len()).contains(&k) {
                f.w_fusion[[k, k]] = 1.0;
            }
        }
        for i in 0..OBJECTS.len() {
            let m = FeatureLayout::MATCH + i;
            // on only when the view shows object i and the strategy names it
            f.w_fusion[[m, FeatureLayout::OBJECT + i]] = cfg.strategy_gain;
            f.w_fusion[[m, dim + 2 * block + i]] = cfg.strategy_gain;
            // already visited views never count as matches
            f.w_fusion[[m, visited]] = -cfg.strategy_gain;
            f.b_fusion[m] = -cfg.strategy_gain;
        }
        Ok(p)
    }

    pub fn default_prior() -> Self {
        Self::prior(DEFAULT_DIM, DEFAULT_EXP_DIM, DEFAULT_HEADS, DEFAULT_BUCKETS, &PriorConfig::default())
            .expect("default shapes are valid")
    }

    pub fn dim(&self) -> usize {
        self.instr_proj.nrows()
    }

    pub fn buckets(&self) -> usize {
        self.token_embed.nrows()
    }

    /// Visit every tensor in a fixed order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, ArrayViewMutD<'_, f64>)) {
        f("token_embed", self.token_embed.view_mut().into_dyn());
        f("instr_proj", self.instr_proj.view_mut().into_dyn());
        f("cand_proj", self.cand_proj.view_mut().into_dyn());
        f("scale_gate", ArrayViewMut1::from(std::slice::from_mut(&mut self.scale_gate)).into_dyn());
        f("stop_bias", ArrayViewMut1::from(std::slice::from_mut(&mut self.stop_bias)).into_dyn());
        let fp = &mut self.fusion;
        f("enc.s_table", fp.enc.s_table.view_mut().into_dyn());
        f("enc.c_table", fp.enc.c_table.view_mut().into_dyn());
        f("enc.t_table", fp.enc.t_table.view_mut().into_dyn());
        f("enc.out_proj", fp.enc.out_proj.view_mut().into_dyn());
        f("w_q", fp.w_q.view_mut().into_dyn());
        f("w_k", fp.w_k.view_mut().into_dyn());
        f("w_v", fp.w_v.view_mut().into_dyn());
        f("w_o", fp.w_o.view_mut().into_dyn());
        f("w_fusion", fp.w_fusion.view_mut().into_dyn());
        f("b_fusion", fp.b_fusion.view_mut().into_dyn());
    }

    /// Snapshot of every tensor, in [`visit_mut`](Self::visit_mut) order.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.clone().visit_mut(|name, t| {
            out.push(NamedTensor { name: name.to_string(), shape: t.shape().to_vec(), data: t.iter().copied().collect() })
        });
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.clone().visit_mut(|_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    /// `self += scale * other`; shapes must agree.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        let src = other.named_tensors();
        let mut it = src.iter();
        self.visit_mut(|_, mut t| {
            let s = it.next().expect("same tensor list");
            for (a, b) in t.iter_mut().zip(&s.data) {
                *a += scale * b;
            }
        });
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, mut t| t.fill(0.0));
        z
    }

    /// Sum of squares over all entries.
    pub fn sq_norm(&self) -> f64 {
        self.named_tensors().iter().flat_map(|t| t.data.iter()).map(|v| v * v).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: self.dim(),
            exp_dim: self.fusion.exp_dim(),
            heads: self.fusion.heads,
            buckets: self.buckets(),
            tensors: self.named_tensors(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        let mut p = Self::zeros(c.dim, c.exp_dim, c.heads, c.buckets)?;
        let mut err = None;
        let mut it = c.tensors.iter();
        p.visit_mut(|name, mut t| {
            if err.is_some() {
                return;
            }
            match it.next() {
                Some(s) if s.name == name && s.shape == t.shape() && s.data.len() == t.len() => {
                    for (a, b) in t.iter_mut().zip(&s.data) {
                        *a = *b;
                    }
                }
                _ => err = Some(invalid(format!("checkpoint tensor {name} is missing or misshapen"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(invalid("checkpoint has extra tensors"));
        }
        if !p.all_finite() {
            return Err(Error::Numeric("checkpoint holds non-finite values".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_checkpoint(&c)
    }
}

/// Mean of the token-embedding rows of `buckets`; zero for no tokens.
pub(crate) fn mean_rows(table: &Array2<f64>, buckets: &[usize]) -> Array1<f64> {
    let mut m = Array1::zeros(table.ncols());
    if buckets.is_empty() {
        return m;
    }
    for &b in buckets {
        m += &table.row(b);
    }
    m / buckets.len() as f64
}

impl EncoderParams {
    pub fn block(&self) -> usize {
        self.s_table.ncols()
    }
}
