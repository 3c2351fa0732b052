use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};

use super::{encoder_input, relu, ExperienceTokens};
use crate::error::{invalid, Error, Result};
use crate::explib::Experience;
use crate::policy::{mean_rows, sigmoid, PolicyParams};
use crate::tokens::token_bucket;

/// Attention over the first `m_real` key rows of `k`/`v`; further rows are
/// padding, computed but masked out. Returns the head outputs concatenated
/// (`L x d`) and the weights over the real keys (`heads x L x m_real`).
pub(crate) fn multi_head(
    heads: usize,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    m_real: usize,
) -> (Array2<f64>, Array3<f64>) {
    let (l, d) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((l, d));
    let mut omega = Array3::zeros((heads, l, m_real));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for mut row in sc.rows_mut() {
            let max = row.slice(s![..m_real]).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for (j, x) in row.iter_mut().enumerate() {
                *x = if j < m_real { (*x - max).exp() } else { 0.0 };
                z += *x;
            }
            row /= z;
        }
        out.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        omega.slice_mut(s![h, .., ..]).assign(&sc.slice(s![.., ..m_real]));
    }
    (out, omega)
}

/// Multiply-accumulate counts: once-per-episode work and one entry per step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacTally {
    pub episode: u64,
    pub steps: Vec<u64>,
}

impl MacTally {
    pub fn mean_per_step(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.steps.iter().sum::<u64>() as f64 / self.steps.len() as f64
        }
    }
}

/// Per-step inputs. Rows `0..n_local` of `views` belong to the local
/// actions in order; `globals` holds one cached feature per jump target.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub views: Array2<f64>,
    pub n_local: usize,
    pub globals: Array2<f64>,
}

struct Memory {
    tokens: Vec<ExperienceTokens>,
    x: Array2<f64>,
    z: Array2<f64>,
    f_e: Array2<f64>,
    /// Padded to `m_pad` rows.
    k: Array2<f64>,
    v: Array2<f64>,
}

struct Attention {
    q: Array2<f64>,
    omega: Array3<f64>,
    heads: Array2<f64>,
    f_att: Array2<f64>,
    z: Array2<f64>,
}

struct StepTape {
    input: StepInput,
    attn: Option<Attention>,
    fused: Array2<f64>,
    proj: Array2<f64>,
}

/// Forward computation of one episode's decisions, recorded for
/// [`backward`](Graph::backward).
pub struct Graph<'p> {
    params: &'p PolicyParams,
    instr: Vec<usize>,
    e_mean: Array1<f64>,
    u: Array1<f64>,
    /// `cand_proj^T u`, shared by all jump targets.
    w: Array1<f64>,
    memory: Option<Memory>,
    steps: Vec<StepTape>,
    record: bool,
    pub macs: MacTally,
}

impl<'p> Graph<'p> {
    /// Encode the instruction and the retrieved experiences. Attention
    /// always runs over `m_pad.max(M)` key slots.
    pub fn new(
        params: &'p PolicyParams,
        instr_tokens: &[String],
        experiences: &[Experience],
        m_pad: usize,
        record: bool,
    ) -> Result<Self> {
        if instr_tokens.is_empty() {
            return Err(invalid("instruction has no tokens"));
        }
        let (dim, nb) = (params.dim(), params.buckets());
        let fp = &params.fusion;
        let d = fp.exp_dim();
        let instr: Vec<usize> = instr_tokens.iter().map(|t| token_bucket(t, nb)).collect();
        let e_mean = mean_rows(&params.token_embed, &instr);
        let u = params.instr_proj.dot(&e_mean);
        let w = params.cand_proj.t().dot(&u);
        let mut macs = MacTally { episode: (instr.len() * dim + 2 * dim * dim) as u64, steps: Vec::new() };

        let memory = if experiences.is_empty() {
            None
        } else {
            let m = experiences.len();
            let m_pad = m_pad.max(m);
            let tokens: Vec<ExperienceTokens> = experiences.iter().map(|e| ExperienceTokens::of(e, nb)).collect();
            let mut x = Array2::zeros((m, d));
            for (i, t) in tokens.iter().enumerate() {
                x.row_mut(i).assign(&encoder_input(&fp.enc, t));
                macs.episode += ((t.s.len() + t.c.len() + t.t.len()) * fp.enc.block()) as u64;
            }
            let z = x.dot(&fp.enc.out_proj.t());
            let f_e = z.mapv(relu);
            let mut k = Array2::zeros((m_pad, d));
            let mut v = Array2::zeros((m_pad, d));
            k.slice_mut(s![..m, ..]).assign(&f_e.dot(&fp.w_k.t()));
            v.slice_mut(s![..m, ..]).assign(&f_e.dot(&fp.w_v.t()));
            macs.episode += (m * d * d + 2 * m_pad * d * d) as u64;
            Some(Memory { tokens, x, z, f_e, k, v })
        };
        Ok(Self { params, instr, e_mean, u, w, memory, steps: Vec::new(), record, macs })
    }

    pub fn instr_vec(&self) -> &Array1<f64> {
        &self.u
    }

    pub fn experience_count(&self) -> usize {
        self.memory.as_ref().map_or(0, |m| m.f_e.nrows())
    }

    pub fn experience_features(&self) -> Option<&Array2<f64>> {
        self.memory.as_ref().map(|m| &m.f_e)
    }

    pub fn steps_recorded(&self) -> usize {
        self.steps.len()
    }

    /// Scores for `[stop, locals.., globals..]`.
    pub fn step(&mut self, input: StepInput) -> Result<Array1<f64>> {
        let p = self.params;
        let fp = &p.fusion;
        let (l, dim) = input.views.dim();
        if dim != p.dim() || input.globals.ncols() != dim || input.n_local > l || l == 0 {
            return Err(invalid("step input does not match the policy dimensions"));
        }
        let d = fp.exp_dim();
        let mut mac = 0u64;
        let (attn, fused) = match &self.memory {
            None => (None, input.views.clone()),
            Some(mem) => {
                let m_pad = mem.k.nrows();
                let q = input.views.dot(&fp.w_q.t());
                let (heads, omega) = multi_head(fp.heads, &q, &mem.k, &mem.v, mem.f_e.nrows());
                let f_att = heads.dot(&fp.w_o.t());
                let x = ndarray::concatenate(Axis(1), &[input.views.view(), f_att.view()]).expect("rows agree");
                let z = x.dot(&fp.w_fusion.t()) + &fp.b_fusion;
                let fused = z.mapv(relu);
                mac += (l * dim * d + 2 * l * m_pad * d + l * d * d + l * dim * (dim + d)) as u64;
                (Some(Attention { q, omega, heads, f_att, z }), fused)
            }
        };
        let (scores, proj) = score_rows(p, &fused, &self.u, &self.w, &input.globals, input.n_local);
        mac += (l * dim * dim + 2 * l * dim + dim + input.globals.nrows() * dim) as u64;
        self.macs.steps.push(mac);
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite action score".into()));
        }
        if self.record {
            self.steps.push(StepTape { input, attn, fused, proj });
        }
        Ok(scores)
    }

    /// Attention weights of the last recorded step (`heads x L x M`).
    pub fn last_attention(&self) -> Option<&Array3<f64>> {
        self.steps.last().and_then(|s| s.attn.as_ref()).map(|a| &a.omega)
    }

    /// Fused features of the last recorded step.
    pub fn last_fused(&self) -> Option<&Array2<f64>> {
        self.steps.last().map(|s| &s.fused)
    }

    /// Parameter gradients given `d loss / d scores` for every recorded
    /// step, in order.
    pub fn backward(&self, dscores: &[Array1<f64>]) -> Result<PolicyParams> {
        if !self.record || self.steps.is_empty() {
            return Err(Error::InvalidState("backward needs a recorded forward pass".into()));
        }
        if dscores.len() != self.steps.len() {
            return Err(invalid(format!("{} upstream gradients for {} steps", dscores.len(), self.steps.len())));
        }
        let p = self.params;
        let fp = &p.fusion;
        let mut g = p.zeros_like();
        let dim = p.dim();
        let d = fp.exp_dim();
        let dh = fp.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let gate = sigmoid(p.scale_gate);
        let mut du = Array1::<f64>::zeros(dim);
        let m = self.experience_count();
        let mut dk = Array2::<f64>::zeros((m, d));
        let mut dv = Array2::<f64>::zeros((m, d));

        for (st, ds) in self.steps.iter().zip(dscores) {
            let n_g = st.input.globals.nrows();
            if ds.len() != 1 + st.input.n_local + n_g {
                return Err(invalid("upstream gradient length does not match the action count"));
            }
            let l = st.fused.nrows();
            let mut dfused = Array2::<f64>::zeros(st.fused.dim());
            let mut dgate_raw = 0.0;

            // stop = bias + <mean_rows(fused), u>
            g.stop_bias += ds[0];
            du.scaled_add(ds[0], &st.fused.mean_axis(Axis(0)).expect("rows"));
            for mut r in dfused.rows_mut() {
                r.scaled_add(ds[0] / l as f64, &self.u);
            }
            // local i = gate * <cand_proj fused_i, u>
            for i in 0..st.input.n_local {
                let dsi = ds[1 + i];
                if dsi == 0.0 {
                    continue;
                }
                let proj = st.proj.row(i);
                dgate_raw += dsi * proj.dot(&self.u);
                du.scaled_add(dsi * gate, &proj);
                let dp = &self.u * (dsi * gate);
                outer_add(&mut g.cand_proj, &dp.view(), &st.fused.row(i));
                dfused.row_mut(i).scaled_add(1.0, &p.cand_proj.t().dot(&dp));
            }
            // global j = (1 - gate) * <cand_proj x_j, u>
            for j in 0..n_g {
                let dsj = ds[1 + st.input.n_local + j];
                if dsj == 0.0 {
                    continue;
                }
                let x = st.input.globals.row(j);
                let px = p.cand_proj.dot(&x);
                dgate_raw -= dsj * px.dot(&self.u);
                du.scaled_add(dsj * (1.0 - gate), &px);
                outer_add(&mut g.cand_proj, &(&self.u * (dsj * (1.0 - gate))).view(), &x);
            }
            g.scale_gate += dgate_raw * gate * (1.0 - gate);

            let (Some(a), Some(mem)) = (&st.attn, &self.memory) else {
                continue;
            };
            let dz = &dfused * &a.z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let x = ndarray::concatenate(Axis(1), &[st.input.views.view(), a.f_att.view()]).expect("rows agree");
            g.fusion.w_fusion += &dz.t().dot(&x);
            g.fusion.b_fusion += &dz.sum_axis(Axis(0));
            let datt = dz.dot(&fp.w_fusion.slice(s![.., dim..]));
            g.fusion.w_o += &datt.t().dot(&a.heads);
            let dheads = datt.dot(&fp.w_o);
            let mut dq = Array2::<f64>::zeros(a.q.dim());
            for h in 0..fp.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let om = a.omega.slice(s![h, .., ..]);
                let kh = mem.k.slice(s![..m, h * dh..(h + 1) * dh]);
                let vh = mem.v.slice(s![..m, h * dh..(h + 1) * dh]);
                let dout = dheads.slice(cols);
                let domega = dout.dot(&vh.t());
                dv.slice_mut(cols).scaled_add(1.0, &om.t().dot(&dout));
                let mut dsc = Array2::<f64>::zeros(om.dim());
                for r in 0..om.nrows() {
                    let dot: f64 = om.row(r).dot(&domega.row(r));
                    for c in 0..om.ncols() {
                        dsc[[r, c]] = om[[r, c]] * (domega[[r, c]] - dot) * scale;
                    }
                }
                dq.slice_mut(cols).assign(&dsc.dot(&kh));
                dk.slice_mut(cols).scaled_add(1.0, &dsc.t().dot(&a.q.slice(cols)));
            }
            g.fusion.w_q += &dq.t().dot(&st.input.views);
        }

        if let Some(mem) = &self.memory {
            g.fusion.w_k += &dk.t().dot(&mem.f_e);
            g.fusion.w_v += &dv.t().dot(&mem.f_e);
            let dfe = dk.dot(&fp.w_k) + dv.dot(&fp.w_v);
            let dze = dfe * mem.z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            g.fusion.enc.out_proj += &dze.t().dot(&mem.x);
            let dx = dze.dot(&fp.enc.out_proj);
            let block = fp.enc.block();
            for (i, tok) in mem.tokens.iter().enumerate() {
                let enc = &mut g.fusion.enc;
                for (k, (table, ids)) in
                    [(&mut enc.s_table, &tok.s), (&mut enc.c_table, &tok.c), (&mut enc.t_table, &tok.t)].into_iter().enumerate()
                {
                    if ids.is_empty() {
                        continue;
                    }
                    let part = dx.slice(s![i, k * block..(k + 1) * block]);
                    for &b in ids.iter() {
                        table.row_mut(b).scaled_add(1.0 / ids.len() as f64, &part);
                    }
                }
            }
        }

        outer_add(&mut g.instr_proj, &du.view(), &self.e_mean.view());
        let de = p.instr_proj.t().dot(&du);
        for &b in &self.instr {
            g.token_embed.row_mut(b).scaled_add(1.0 / self.instr.len() as f64, &de);
        }
        Ok(g)
    }
}

fn outer_add(m: &mut Array2<f64>, a: &ArrayView1<f64>, b: &ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(ai, b);
        }
    }
}

/// Scores for stop, local rows and jump targets, plus the projected rows
/// `fused * cand_proj^T`.
pub(crate) fn score_rows(
    p: &PolicyParams,
    fused: &Array2<f64>,
    u: &Array1<f64>,
    w: &Array1<f64>,
    globals: &Array2<f64>,
    n_local: usize,
) -> (Array1<f64>, Array2<f64>) {
    let gate = sigmoid(p.scale_gate);
    let proj = fused.dot(&p.cand_proj.t());
    let local = proj.dot(u);
    let mean = fused.mean_axis(Axis(0)).expect("at least one view");
    let mut scores = Array1::zeros(1 + n_local + globals.nrows());
    scores[0] = p.stop_bias + mean.dot(u);
    for i in 0..n_local {
        scores[1 + i] = gate * local[i];
    }
    let global = globals.dot(w);
    for j in 0..globals.nrows() {
        scores[1 + n_local + j] = (1.0 - gate) * global[j];
    }
    (scores, proj)
}
