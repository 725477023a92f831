//! Conditional velocity network with hand-written reverse-mode gradients.
//!
//! Data flow per call: sinusoidal time embedding -> MLP -> conditioning vector
//! `c`; label embedding projected to the hidden width; conditioning encoder
//! layers (per-token update from the conditioning tokens plus a mean-pooled
//! context, modulated by `c`); linear projections of the conditioning tokens
//! and the noisy tokens added in; residual mixing blocks with adaptive layer
//! norm (shift, scale, gate from `c`) and a mean-pooled token context; final
//! adaptive-norm projection back to 21 values per token.
//!
//! All weights live in one flat `Vec<f64>`; `Layout` records the named
//! tensors and their offsets so checkpoints can carry a manifest.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::system::TOKEN_DIM;

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub time_dim: usize,
    pub label_dim: usize,
    pub hidden: usize,
    pub n_enc: usize,
    pub n_blocks: usize,
    pub mlp_ratio: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            time_dim: 32,
            label_dim: 16,
            hidden: 128,
            n_enc: 2,
            n_blocks: 3,
            mlp_ratio: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument("time_dim must be an even number >= 2".into()));
        }
        if self.label_dim == 0 || self.hidden == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// A dense layer `y = W x (+ b)` addressed inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: Option<usize>,
    out: usize,
    inp: usize,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Lin {
    /// `y += W x + b`.
    fn fwd(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &p[self.w..self.w + self.out * self.inp];
        for (o, yo) in y.iter_mut().enumerate().take(self.out) {
            *yo += dot(&w[o * self.inp..(o + 1) * self.inp], x);
        }
        if let Some(b) = self.b {
            for (yo, bo) in y.iter_mut().zip(&p[b..b + self.out]) {
                *yo += bo;
            }
        }
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and, when requested, `dx += W^T dy`.
    fn bwd(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        {
            let gw = &mut g[self.w..self.w + self.out * self.inp];
            for (o, &d) in dy.iter().enumerate().take(self.out) {
                if d != 0.0 {
                    axpy(d, x, &mut gw[o * self.inp..(o + 1) * self.inp]);
                }
            }
        }
        if let Some(b) = self.b {
            for (gb, d) in g[b..b + self.out].iter_mut().zip(dy) {
                *gb += d;
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.w..self.w + self.out * self.inp];
            for (o, &d) in dy.iter().enumerate().take(self.out) {
                if d != 0.0 {
                    axpy(d, &w[o * self.inp..(o + 1) * self.inp], dx);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ex: Lin,
    ec: Lin,
    et: Lin,
    eo: Lin,
    eg: Lin,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    modulation: Lin,
    w1: Lin,
    w1c: Lin,
    w2: Lin,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub n_params: usize,
    zero_init: Vec<usize>,
    t1: Lin,
    t2: Lin,
    table: usize,
    label: Lin,
    enc: Vec<EncLayer>,
    in_cond: Lin,
    in_x: Lin,
    blocks: Vec<Block>,
    final_mod: Lin,
    out: Lin,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    next: usize,
}

impl Builder {
    fn raw(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, shape, offset: off });
        off
    }

    fn lin(&mut self, name: &str, out: usize, inp: usize, bias: bool) -> Lin {
        let w = self.raw(format!("{name}.w"), vec![out, inp]);
        let b = bias.then(|| self.raw(format!("{name}.b"), vec![out]));
        Lin { w, b, out, inp }
    }
}

impl Layout {
    pub fn new(cfg: &NetConfig, n_labels: usize) -> Self {
        let h = cfg.hidden;
        let f = cfg.hidden * cfg.mlp_ratio;
        let d = TOKEN_DIM;
        let mut b = Builder {
            tensors: Vec::new(),
            next: 0,
        };
        let t1 = b.lin("time.mlp1", h, cfg.time_dim, true);
        let t2 = b.lin("time.mlp2", h, h, true);
        let table = b.raw("label.table".into(), vec![n_labels.max(1), cfg.label_dim]);
        let label = b.lin("label.proj", h, cfg.label_dim, true);
        let enc = (0..cfg.n_enc)
            .map(|i| EncLayer {
                ex: b.lin(&format!("enc{i}.self"), h, h, true),
                ec: b.lin(&format!("enc{i}.cond"), h, d, false),
                et: b.lin(&format!("enc{i}.time"), h, h, false),
                eo: b.lin(&format!("enc{i}.out"), h, h, true),
                eg: b.lin(&format!("enc{i}.pool"), h, h, false),
            })
            .collect();
        let in_cond = b.lin("input.cond", h, d, true);
        let in_x = b.lin("input.noisy", h, d, false);
        let mut zero_init = Vec::new();
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let modulation = b.lin(&format!("block{i}.mod"), 3 * h, h, true);
                zero_init.push(b.tensors.len() - 2);
                zero_init.push(b.tensors.len() - 1);
                Block {
                    modulation,
                    w1: b.lin(&format!("block{i}.mlp1"), f, h, true),
                    w1c: b.lin(&format!("block{i}.pool"), f, h, false),
                    w2: b.lin(&format!("block{i}.mlp2"), h, f, true),
                }
            })
            .collect();
        let final_mod = b.lin("final.mod", 2 * h, h, true);
        zero_init.push(b.tensors.len() - 2);
        zero_init.push(b.tensors.len() - 1);
        let out = b.lin("final.out", d, h, true);
        zero_init.push(b.tensors.len() - 2);
        zero_init.push(b.tensors.len() - 1);
        Layout {
            tensors: b.tensors,
            n_params: b.next,
            zero_init,
            t1,
            t2,
            table,
            label,
            enc,
            in_cond,
            in_x,
            blocks,
            final_mod,
            out,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal features `sin(f_k s), cos(f_k s)` with `f_k` log-spaced in `[1, 200]`.
pub fn time_features(s: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let f = if half > 1 {
            (200f64.ln() * k as f64 / (half - 1) as f64).exp()
        } else {
            1.0
        };
        out[k] = (f * s).sin();
        out[half + k] = (f * s).cos();
    }
    out
}

/// Normalizes each `h`-wide row; returns per-row reciprocal standard deviations.
fn layer_norm(x: &[f64], h: usize, n: &mut [f64]) -> Vec<f64> {
    x.chunks(h)
        .zip(n.chunks_mut(h))
        .map(|(row, out)| {
            let mu = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / h as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - mu) * rstd;
            }
            rstd
        })
        .collect()
}

fn layer_norm_bwd(n: &[f64], rstd: &[f64], dn: &[f64], h: usize, dx: &mut [f64]) {
    for ((nrow, dnrow), (dxrow, &r)) in n.chunks(h).zip(dn.chunks(h)).zip(dx.chunks_mut(h).zip(rstd)) {
        let m1 = dnrow.iter().sum::<f64>() / h as f64;
        let m2 = dot(dnrow, nrow) / h as f64;
        for ((dxi, &dni), &ni) in dxrow.iter_mut().zip(dnrow).zip(nrow) {
            *dxi += r * (dni - m1 - ni * m2);
        }
    }
}

fn mean_rows(x: &[f64], h: usize) -> Vec<f64> {
    let l = x.len() / h;
    let mut m = vec![0.0; h];
    for row in x.chunks(h) {
        axpy(1.0, row, &mut m);
    }
    m.iter_mut().for_each(|v| *v /= l as f64);
    m
}

struct EncCache {
    x_in: Vec<f64>,
    a: Vec<f64>,
    z: Vec<f64>,
    g: Vec<f64>,
}

struct BlockCache {
    n: Vec<f64>,
    rstd: Vec<f64>,
    modv: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
    u: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct Cache {
    l: usize,
    emb: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    temb: Vec<f64>,
    c: Vec<f64>,
    labels: Vec<usize>,
    enc: Vec<EncCache>,
    blocks: Vec<BlockCache>,
    fin_n: Vec<f64>,
    fin_rstd: Vec<f64>,
    fin_mod: Vec<f64>,
    fin_h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VelocityNet {
    pub cfg: NetConfig,
    pub n_labels: usize,
    pub layout: Layout,
}

impl VelocityNet {
    pub fn new(cfg: NetConfig, n_labels: usize) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg, n_labels);
        Ok(VelocityNet { cfg, n_labels, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    /// Scaled-normal weights, zero biases, unit-normal label table; the
    /// modulation and output layers start at zero so the initial field is 0.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        for (ti, t) in self.layout.tensors.iter().enumerate() {
            if self.layout.zero_init.contains(&ti) || t.shape.len() != 2 {
                continue;
            }
            let mut rng = keyed_rng(seed, &[0x696e6974, ti as u64]);
            let scale = if t.name == "label.table" {
                1.0
            } else {
                1.0 / (t.shape[1] as f64).sqrt()
            };
            let n: usize = t.shape.iter().product();
            for v in &mut p[t.offset..t.offset + n] {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    fn check(&self, params: &[f64], xs: &[f64], cond: &[f64], labels: &[usize]) -> Result<usize> {
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let l = labels.len();
        if l == 0 || xs.len() != l * TOKEN_DIM || cond.len() != l * TOKEN_DIM {
            return Err(Error::Shape(format!(
                "token arrays of length {} and {} do not match {l} labels",
                xs.len(),
                cond.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&a| a >= self.n_labels.max(1)) {
            return Err(Error::Shape(format!("label {bad} outside the embedding table")));
        }
        Ok(l)
    }

    pub fn forward(&self, params: &[f64], s: f64, xs: &[f64], cond: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, s, xs, cond, labels)?.0)
    }

    pub fn forward_cached(
        &self,
        p: &[f64],
        s: f64,
        xs: &[f64],
        cond: &[f64],
        labels: &[usize],
    ) -> Result<(Vec<f64>, Cache)> {
        let l = self.check(p, xs, cond, labels)?;
        let ly = &self.layout;
        let h = self.cfg.hidden;
        let f = h * self.cfg.mlp_ratio;
        let d = TOKEN_DIM;

        let emb = time_features(s, self.cfg.time_dim);
        let mut a1 = vec![0.0; h];
        ly.t1.fwd(p, &emb, &mut a1);
        let h1: Vec<f64> = a1.iter().map(|&v| silu(v)).collect();
        let mut temb = vec![0.0; h];
        ly.t2.fwd(p, &h1, &mut temb);
        let c: Vec<f64> = temb.iter().map(|&v| silu(v)).collect();

        let e = self.cfg.label_dim;
        let mut x = vec![0.0; l * h];
        for (i, &a) in labels.iter().enumerate() {
            let row = &p[ly.table + a * e..ly.table + (a + 1) * e];
            ly.label.fwd(p, row, &mut x[i * h..(i + 1) * h]);
        }

        let mut enc = Vec::with_capacity(ly.enc.len());
        for layer in &ly.enc {
            let mut tc = vec![0.0; h];
            layer.et.fwd(p, &c, &mut tc);
            let mut a = vec![0.0; l * h];
            for i in 0..l {
                let ai = &mut a[i * h..(i + 1) * h];
                ai.copy_from_slice(&tc);
                layer.ex.fwd(p, &x[i * h..(i + 1) * h], ai);
                layer.ec.fwd(p, &cond[i * d..(i + 1) * d], ai);
            }
            let z: Vec<f64> = a.iter().map(|&v| silu(v)).collect();
            let g = mean_rows(&z, h);
            let mut pooled = vec![0.0; h];
            layer.eg.fwd(p, &g, &mut pooled);
            let x_in = x.clone();
            for i in 0..l {
                let xi = &mut x[i * h..(i + 1) * h];
                axpy(1.0, &pooled, xi);
                layer.eo.fwd(p, &z[i * h..(i + 1) * h], xi);
            }
            enc.push(EncCache { x_in, a, z, g });
        }

        for i in 0..l {
            let xi = &mut x[i * h..(i + 1) * h];
            ly.in_cond.fwd(p, &cond[i * d..(i + 1) * d], xi);
            ly.in_x.fwd(p, &xs[i * d..(i + 1) * d], xi);
        }

        let mut blocks = Vec::with_capacity(ly.blocks.len());
        for blk in &ly.blocks {
            let mut modv = vec![0.0; 3 * h];
            blk.modulation.fwd(p, &c, &mut modv);
            let (shift, rest) = modv.split_at(h);
            let (scale, gate) = rest.split_at(h);
            let mut n = vec![0.0; l * h];
            let rstd = layer_norm(&x, h, &mut n);
            let mut hh = vec![0.0; l * h];
            for (hrow, nrow) in hh.chunks_mut(h).zip(n.chunks(h)) {
                for k in 0..h {
                    hrow[k] = nrow[k] * (1.0 + scale[k]) + shift[k];
                }
            }
            let pm = mean_rows(&hh, h);
            let mut pc = vec![0.0; f];
            blk.w1c.fwd(p, &pm, &mut pc);
            let mut u = vec![0.0; l * f];
            for i in 0..l {
                let ui = &mut u[i * f..(i + 1) * f];
                ui.copy_from_slice(&pc);
                blk.w1.fwd(p, &hh[i * h..(i + 1) * h], ui);
            }
            let z: Vec<f64> = u.iter().map(|&v| silu(v)).collect();
            let mut y = vec![0.0; l * h];
            for i in 0..l {
                blk.w2.fwd(p, &z[i * f..(i + 1) * f], &mut y[i * h..(i + 1) * h]);
            }
            for (xrow, yrow) in x.chunks_mut(h).zip(y.chunks(h)) {
                for k in 0..h {
                    xrow[k] += gate[k] * yrow[k];
                }
            }
            blocks.push(BlockCache {
                n,
                rstd,
                modv,
                h: hh,
                p: pm,
                u,
                z,
                y,
            });
        }

        let mut fin_mod = vec![0.0; 2 * h];
        ly.final_mod.fwd(p, &c, &mut fin_mod);
        let mut fin_n = vec![0.0; l * h];
        let fin_rstd = layer_norm(&x, h, &mut fin_n);
        let mut fin_h = vec![0.0; l * h];
        for (hrow, nrow) in fin_h.chunks_mut(h).zip(fin_n.chunks(h)) {
            for k in 0..h {
                hrow[k] = nrow[k] * (1.0 + fin_mod[h + k]) + fin_mod[k];
            }
        }
        let mut out = vec![0.0; l * d];
        for i in 0..l {
            ly.out.fwd(p, &fin_h[i * h..(i + 1) * h], &mut out[i * d..(i + 1) * d]);
        }

        let cache = Cache {
            l,
            emb,
            a1,
            h1,
            temb,
            c,
            labels: labels.to_vec(),
            enc,
            blocks,
            fin_n,
            fin_rstd,
            fin_mod,
            fin_h,
        };
        Ok((out, cache))
    }

    /// Accumulates into `grad` the gradient of `sum(dout * output)`.
    pub fn backward(&self, p: &[f64], cache: &Cache, cond: &[f64], xs: &[f64], dout: &[f64], grad: &mut [f64]) {
        let ly = &self.layout;
        let h = self.cfg.hidden;
        let f = h * self.cfg.mlp_ratio;
        let d = TOKEN_DIM;
        let l = cache.l;

        let mut dc = vec![0.0; h];

        // Final layer.
        let mut dh = vec![0.0; l * h];
        for i in 0..l {
            ly.out.bwd(
                p,
                grad,
                &cache.fin_h[i * h..(i + 1) * h],
                &dout[i * d..(i + 1) * d],
                Some(&mut dh[i * h..(i + 1) * h]),
            );
        }
        let mut dmod = vec![0.0; 2 * h];
        let mut dn = vec![0.0; l * h];
        for i in 0..l {
            for k in 0..h {
                let g = dh[i * h + k];
                dmod[k] += g;
                dmod[h + k] += g * cache.fin_n[i * h + k];
                dn[i * h + k] = g * (1.0 + cache.fin_mod[h + k]);
            }
        }
        ly.final_mod.bwd(p, grad, &cache.c, &dmod, Some(&mut dc));
        let mut dx = vec![0.0; l * h];
        layer_norm_bwd(&cache.fin_n, &cache.fin_rstd, &dn, h, &mut dx);

        // Mixing blocks in reverse.
        for (blk, bc) in ly.blocks.iter().zip(&cache.blocks).rev() {
            let gate = &bc.modv[2 * h..3 * h];
            let scale = &bc.modv[h..2 * h];
            let mut dmod = vec![0.0; 3 * h];
            let mut dy = vec![0.0; l * h];
            for i in 0..l {
                for k in 0..h {
                    let g = dx[i * h + k];
                    dmod[2 * h + k] += g * bc.y[i * h + k];
                    dy[i * h + k] = g * gate[k];
                }
            }
            let mut dz = vec![0.0; l * f];
            for i in 0..l {
                blk.w2.bwd(
                    p,
                    grad,
                    &bc.z[i * f..(i + 1) * f],
                    &dy[i * h..(i + 1) * h],
                    Some(&mut dz[i * f..(i + 1) * f]),
                );
            }
            let du: Vec<f64> = dz.iter().zip(&bc.u).map(|(g, &u)| g * silu_grad(u)).collect();
            let mut dhh = vec![0.0; l * h];
            let mut du_sum = vec![0.0; f];
            for i in 0..l {
                let dui = &du[i * f..(i + 1) * f];
                blk.w1.bwd(p, grad, &bc.h[i * h..(i + 1) * h], dui, Some(&mut dhh[i * h..(i + 1) * h]));
                axpy(1.0, dui, &mut du_sum);
            }
            let mut dp = vec![0.0; h];
            blk.w1c.bwd(p, grad, &bc.p, &du_sum, Some(&mut dp));
            for row in dhh.chunks_mut(h) {
                axpy(1.0 / l as f64, &dp, row);
            }
            let mut dn = vec![0.0; l * h];
            for i in 0..l {
                for k in 0..h {
                    let g = dhh[i * h + k];
                    dmod[k] += g;
                    dmod[h + k] += g * bc.n[i * h + k];
                    dn[i * h + k] = g * (1.0 + scale[k]);
                }
            }
            blk.modulation.bwd(p, grad, &cache.c, &dmod, Some(&mut dc));
            layer_norm_bwd(&bc.n, &bc.rstd, &dn, h, &mut dx);
        }

        // Input projections.
        for i in 0..l {
            let dxi = &dx[i * h..(i + 1) * h];
            ly.in_cond.bwd(p, grad, &cond[i * d..(i + 1) * d], dxi, None);
            ly.in_x.bwd(p, grad, &xs[i * d..(i + 1) * d], dxi, None);
        }

        // Conditioning encoder in reverse.
        for (layer, ec) in ly.enc.iter().zip(&cache.enc).rev() {
            let mut dz = vec![0.0; l * h];
            let mut dx_sum = vec![0.0; h];
            for i in 0..l {
                let dxi = &dx[i * h..(i + 1) * h];
                layer.eo.bwd(p, grad, &ec.z[i * h..(i + 1) * h], dxi, Some(&mut dz[i * h..(i + 1) * h]));
                axpy(1.0, dxi, &mut dx_sum);
            }
            let mut dg = vec![0.0; h];
            layer.eg.bwd(p, grad, &ec.g, &dx_sum, Some(&mut dg));
            for row in dz.chunks_mut(h) {
                axpy(1.0 / l as f64, &dg, row);
            }
            let da: Vec<f64> = dz.iter().zip(&ec.a).map(|(g, &a)| g * silu_grad(a)).collect();
            let mut da_sum = vec![0.0; h];
            for i in 0..l {
                let dai = &da[i * h..(i + 1) * h];
                layer.ex.bwd(p, grad, &ec.x_in[i * h..(i + 1) * h], dai, Some(&mut dx[i * h..(i + 1) * h]));
                layer.ec.bwd(p, grad, &cond[i * d..(i + 1) * d], dai, None);
                axpy(1.0, dai, &mut da_sum);
            }
            layer.et.bwd(p, grad, &cache.c, &da_sum, Some(&mut dc));
        }

        // Label embedding.
        let e = self.cfg.label_dim;
        for (i, &a) in cache.labels.iter().enumerate() {
            let mut de = vec![0.0; e];
            let row: Vec<f64> = p[ly.table + a * e..ly.table + (a + 1) * e].to_vec();
            ly.label.bwd(p, grad, &row, &dx[i * h..(i + 1) * h], Some(&mut de));
            axpy(1.0, &de, &mut grad[ly.table + a * e..ly.table + (a + 1) * e]);
        }

        // Time embedding.
        let dtemb: Vec<f64> = dc.iter().zip(&cache.temb).map(|(g, &t)| g * silu_grad(t)).collect();
        let mut dh1 = vec![0.0; h];
        ly.t2.bwd(p, grad, &cache.h1, &dtemb, Some(&mut dh1));
        let da1: Vec<f64> = dh1.iter().zip(&cache.a1).map(|(g, &a)| g * silu_grad(a)).collect();
        ly.t1.bwd(p, grad, &cache.emb, &da1, None);
    }
}
