//! Architecture layout, forward pass with a trace, and analytic backward pass.

use crate::error::{Error, Result};
use crate::field::DistortionField;
use crate::geom::Vec2;
use crate::nn::config::{NetworkConfig, DOWNSAMPLING_BLOCKS};
use crate::nn::loss::{loss_total, LossBreakdown};
use crate::nn::params::{Gradients, Init, NetworkParams, ParamSpec};
use crate::nn::tensor::*;
use crate::raster::{FingerMask, GrayImage, GridMask};

/// `f64` working copy of the parameters, indexed like
/// [`NetworkParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub tensors: Vec<Vec<f64>>,
}

impl Weights {
    pub fn from_params(params: &NetworkParams) -> Self {
        Weights { tensors: params.to_f64() }
    }
}

const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;
const OUTPUT_GAIN: f64 = 1.0;

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, ci: usize, co: usize, geom: ConvGeom, bias: bool, gain: f64) -> ConvUnit {
        let fan_in = ci * geom.kernel * geom.kernel;
        let w = self.add(
            format!("{name}.weight"),
            vec![co, ci, geom.kernel, geom.kernel],
            Init::FanIn { fan_in, gain },
        );
        let b = bias.then(|| self.add(format!("{name}.bias"), vec![co], Init::Zeros));
        ConvUnit { w, b, co, geom }
    }

    fn cnr(&mut self, name: &str, ci: usize, co: usize, geom: ConvGeom, relu: bool) -> CnrUnit {
        let gain = if relu { RELU_GAIN } else { LINEAR_GAIN };
        let conv = self.conv(&format!("{name}.conv"), ci, co, geom, false, gain);
        let gamma = self.add(format!("{name}.norm.gamma"), vec![co], Init::Ones);
        let beta = self.add(format!("{name}.norm.beta"), vec![co], Init::Zeros);
        CnrUnit { conv, norm: NormUnit { gamma, beta, groups: norm_groups(co) }, relu }
    }

    fn linear(&mut self, name: &str, ci: usize, co: usize, gain: f64) -> LinearUnit {
        let w = self.add(format!("{name}.weight"), vec![co, ci], Init::FanIn { fan_in: ci, gain });
        let b = self.add(format!("{name}.bias"), vec![co], Init::Zeros);
        LinearUnit { w, b, co }
    }

    fn attention(&mut self, name: &str, c: usize) -> AttnUnit {
        let mid = (c / 8).max(4);
        AttnUnit {
            reduce: self.linear(&format!("{name}.reduce"), c, mid, RELU_GAIN),
            gate_h: self.linear(&format!("{name}.gate_h"), mid, c, LINEAR_GAIN),
            gate_w: self.linear(&format!("{name}.gate_w"), mid, c, LINEAR_GAIN),
        }
    }
}

struct ConvUnit {
    w: usize,
    b: Option<usize>,
    co: usize,
    geom: ConvGeom,
}

struct NormUnit {
    gamma: usize,
    beta: usize,
    groups: usize,
}

/// conv → group norm → optional ReLU.
struct CnrUnit {
    conv: ConvUnit,
    norm: NormUnit,
    relu: bool,
}

struct LinearUnit {
    w: usize,
    b: usize,
    co: usize,
}

struct AttnUnit {
    reduce: LinearUnit,
    gate_h: LinearUnit,
    gate_w: LinearUnit,
}

struct ResUnit {
    a: CnrUnit,
    b: CnrUnit,
}

struct PyramidUnit {
    branches: Vec<CnrUnit>,
    gap: Option<LinearUnit>,
    fuse: CnrUnit,
}

struct Layout {
    down: Vec<CnrUnit>,
    attn: AttnUnit,
    stem: CnrUnit,
    res: Vec<ResUnit>,
    pyramid: PyramidUnit,
    head_attn: AttnUnit,
    head: CnrUnit,
    out: ConvUnit,
    specs: Vec<ParamSpec>,
}

const DOWN: ConvGeom = ConvGeom { kernel: 3, stride: 2, dilation: 1 };
const SAME3: ConvGeom = ConvGeom { kernel: 3, stride: 1, dilation: 1 };
const POINT: ConvGeom = ConvGeom { kernel: 1, stride: 1, dilation: 1 };

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut b = Builder { specs: Vec::new() };
        let mut ci = 1;
        let down = (0..DOWNSAMPLING_BLOCKS)
            .map(|i| {
                let co = cfg.base_channels << i;
                let u = b.cnr(&format!("down{i}"), ci, co, DOWN, true);
                ci = co;
                u
            })
            .collect();
        let c = cfg.feature_channels();
        let attn = b.attention("attention", c + 1);
        let stem = b.cnr("stem", c + 1, c, SAME3, true);
        let res = (0..cfg.num_residual_blocks)
            .map(|k| ResUnit {
                a: b.cnr(&format!("res{k}.a"), c, c, SAME3, true),
                b: b.cnr(&format!("res{k}.b"), c, c, SAME3, false),
            })
            .collect();
        let a = cfg.pyramid_channels();
        let mut branches = vec![b.cnr("pyramid.point", c, a, POINT, true)];
        for &d in &cfg.pyramid_dilations {
            let g = ConvGeom { kernel: 3, stride: 1, dilation: d };
            branches.push(b.cnr(&format!("pyramid.dilated{d}"), c, a, g, true));
        }
        let gap = cfg.include_gap_branch.then(|| b.linear("pyramid.pool", c, a, RELU_GAIN));
        let nb = branches.len() + gap.is_some() as usize;
        let fuse = b.cnr("pyramid.fuse", a * nb, c, POINT, true);
        let head_attn = b.attention("head.attention", c);
        let hc = cfg.head_channels();
        let head = b.cnr("head.hidden", c, hc, SAME3, true);
        let out = b.conv("head.out", hc, 2, POINT, true, OUTPUT_GAIN);
        Layout {
            down,
            attn,
            stem,
            res,
            pyramid: PyramidUnit { branches, gap, fuse },
            head_attn,
            head,
            out,
            specs: b.specs,
        }
    }
}

/// Names, shapes and initialisers of every parameter tensor, in order.
pub fn param_specs(config: &NetworkConfig) -> Vec<ParamSpec> {
    Layout::new(config).specs
}

struct CnrCache {
    conv: ConvCache,
    norm: NormCache,
    out: Tensor,
}

impl CnrUnit {
    fn forward(&self, x: &Tensor, wt: &Weights) -> CnrCache {
        let bias = self.conv.b.map(|b| wt.tensors[b].as_slice());
        let (y, conv) = conv_forward(x, &wt.tensors[self.conv.w], bias, self.conv.co, self.conv.geom);
        let (mut out, norm) =
            group_norm_forward(&y, &wt.tensors[self.norm.gamma], &wt.tensors[self.norm.beta], self.norm.groups);
        if self.relu {
            relu_forward(&mut out);
        }
        CnrCache { conv, norm, out }
    }

    fn backward(&self, mut dy: Tensor, cache: &CnrCache, wt: &Weights, g: &mut Gradients, need_dx: bool) -> Option<Tensor> {
        if self.relu {
            relu_backward(&mut dy, &cache.out);
        }
        let (dgamma, dbeta) = two_mut(&mut g.tensors, self.norm.gamma, self.norm.beta);
        let dy = group_norm_backward(&dy, &cache.norm, &wt.tensors[self.norm.gamma], dgamma, dbeta);
        conv_backward(&dy, &cache.conv, &wt.tensors[self.conv.w], self.conv.geom, &mut g.tensors[self.conv.w], None, need_dx)
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

struct AttnCache {
    x: Tensor,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    gh: Vec<f64>,
    gw: Vec<f64>,
    out: Tensor,
}

impl AttnUnit {
    /// Gates each channel by a row factor and a column factor computed from
    /// the row-pooled and column-pooled encodings.
    fn forward(&self, x: &Tensor, wt: &Weights) -> AttnCache {
        let (c, h, w) = (x.c, x.h, x.w);
        let l = h + w;
        let mut pooled = vec![0.0; c * l];
        for ch in 0..c {
            let p = x.plane(ch);
            for i in 0..h {
                pooled[ch * l + i] = p[i * w..(i + 1) * w].iter().sum::<f64>() / w as f64;
            }
            for j in 0..w {
                pooled[ch * l + h + j] = (0..h).map(|i| p[i * w + j]).sum::<f64>() / h as f64;
            }
        }
        let mid = self.reduce.co;
        let mut hidden = linear_forward(&wt.tensors[self.reduce.w], &wt.tensors[self.reduce.b], &pooled, mid, l);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let (hh, hw) = split_cols(&hidden, mid, h, w);
        let mut gh = linear_forward(&wt.tensors[self.gate_h.w], &wt.tensors[self.gate_h.b], &hh, c, h);
        let mut gw = linear_forward(&wt.tensors[self.gate_w.w], &wt.tensors[self.gate_w.b], &hw, c, w);
        gh.iter_mut().for_each(|v| *v = sigmoid(*v));
        gw.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut out = x.clone();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out.data[(ch * h + i) * w + j] *= gh[ch * h + i] * gw[ch * w + j];
                }
            }
        }
        AttnCache { x: x.clone(), pooled, hidden, gh, gw, out }
    }

    fn backward(&self, dy: &Tensor, k: &AttnCache, wt: &Weights, g: &mut Gradients) -> Tensor {
        let (c, h, w) = (k.x.c, k.x.h, k.x.w);
        let l = h + w;
        let mut dx = Tensor::zeros(c, h, w);
        let mut dgh = vec![0.0; c * h];
        let mut dgw = vec![0.0; c * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let idx = (ch * h + i) * w + j;
                    let (a, b) = (k.gh[ch * h + i], k.gw[ch * w + j]);
                    dx.data[idx] = dy.data[idx] * a * b;
                    dgh[ch * h + i] += dy.data[idx] * k.x.data[idx] * b;
                    dgw[ch * w + j] += dy.data[idx] * k.x.data[idx] * a;
                }
            }
        }
        dgh.iter_mut().zip(&k.gh).for_each(|(d, s)| *d *= s * (1.0 - s));
        dgw.iter_mut().zip(&k.gw).for_each(|(d, s)| *d *= s * (1.0 - s));
        let mid = self.reduce.co;
        let (hh, hw) = split_cols(&k.hidden, mid, h, w);
        let dhh = {
            let (dw, db) = two_mut(&mut g.tensors, self.gate_h.w, self.gate_h.b);
            linear_backward(&dgh, &hh, &wt.tensors[self.gate_h.w], c, h, dw, db)
        };
        let dhw = {
            let (dw, db) = two_mut(&mut g.tensors, self.gate_w.w, self.gate_w.b);
            linear_backward(&dgw, &hw, &wt.tensors[self.gate_w.w], c, w, dw, db)
        };
        let mut dhidden = join_cols(&dhh, &dhw, mid, h, w);
        dhidden.iter_mut().zip(&k.hidden).for_each(|(d, v)| {
            if *v <= 0.0 {
                *d = 0.0
            }
        });
        let dpooled = {
            let (dw, db) = two_mut(&mut g.tensors, self.reduce.w, self.reduce.b);
            linear_backward(&dhidden, &k.pooled, &wt.tensors[self.reduce.w], mid, l, dw, db)
        };
        for ch in 0..c {
            for i in 0..h {
                let dr = dpooled[ch * l + i] / w as f64;
                for j in 0..w {
                    let dc = dpooled[ch * l + h + j] / h as f64;
                    dx.data[(ch * h + i) * w + j] += dr + dc;
                }
            }
        }
        dx
    }
}

/// Splits a `rows × (h + w)` matrix into its `h` and `w` column blocks.
fn split_cols(m: &[f64], rows: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let l = h + w;
    let mut a = Vec::with_capacity(rows * h);
    let mut b = Vec::with_capacity(rows * w);
    for r in 0..rows {
        a.extend_from_slice(&m[r * l..r * l + h]);
        b.extend_from_slice(&m[r * l + h..(r + 1) * l]);
    }
    (a, b)
}

fn join_cols(a: &[f64], b: &[f64], rows: usize, h: usize, w: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(rows * (h + w));
    for r in 0..rows {
        m.extend_from_slice(&a[r * h..(r + 1) * h]);
        m.extend_from_slice(&b[r * w..(r + 1) * w]);
    }
    m
}

struct ResCache {
    a: CnrCache,
    b: CnrCache,
    out: Tensor,
}

struct PyramidCache {
    branches: Vec<CnrCache>,
    pooled: Vec<f64>,
    gap: Vec<f64>,
    fuse: CnrCache,
}

/// Intermediate state of one forward pass, consumed by [`backward`].
pub struct Trace {
    down: Vec<CnrCache>,
    attn: AttnCache,
    stem: CnrCache,
    res: Vec<ResCache>,
    pyramid: PyramidCache,
    head_attn: AttnCache,
    head: CnrCache,
    out: ConvCache,
    output_scale: f64,
    block_size: usize,
    /// Raw two-channel output (x then y), already scaled.
    pub output: Tensor,
}

impl Trace {
    pub fn field(&self) -> DistortionField {
        let g = self.output.plane_len();
        let (gw, gh) = (self.output.w, self.output.h);
        let v = (0..g).map(|k| Vec2::new(self.output.data[k], self.output.data[g + k])).collect();
        DistortionField::new(gw, gh, self.block_size, v).expect("grid shape")
    }

    /// On/off state of every rectifier, used to detect kink crossings.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut p = Vec::new();
        let mut push = |t: &[f64]| p.extend(t.iter().map(|v| *v > 0.0));
        for d in &self.down {
            push(&d.out.data);
        }
        push(&self.attn.hidden);
        push(&self.stem.out.data);
        for r in &self.res {
            push(&r.a.out.data);
            push(&r.out.data);
        }
        for b in &self.pyramid.branches {
            push(&b.out.data);
        }
        push(&self.pyramid.gap);
        push(&self.pyramid.fuse.out.data);
        push(&self.head_attn.hidden);
        push(&self.head.out.data);
        p
    }
}

/// Network input: the normalised image and the block-fraction mask channel.
pub fn prepare_input(config: &NetworkConfig, image: &GrayImage, mask: &FingerMask) -> Result<(Tensor, Tensor)> {
    let n = config.input_size;
    if image.width() != n || image.height() != n {
        return Err(Error::ShapeMismatch(format!(
            "network expects {n}×{n} input, got {}×{}",
            image.width(),
            image.height()
        )));
    }
    let norm = image.normalized(mask)?;
    let g = config.grid_side();
    let frac = mask.block_fraction(config.block_size);
    Ok((Tensor::new(1, n, n, norm), Tensor::new(1, g, g, frac)))
}

fn check(t: &Tensor, stage: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(stage.to_string()))
    }
}

/// Forward pass on prepared inputs.
pub fn forward_traced(config: &NetworkConfig, wt: &Weights, input: &Tensor, mask: &Tensor) -> Result<Trace> {
    let layout = Layout::new(config);
    if wt.tensors.len() != layout.specs.len() {
        return Err(Error::ModelConfigMismatch("weight count does not match config".into()));
    }
    let n = config.input_size;
    let g = config.grid_side();
    if (input.c, input.h, input.w) != (1, n, n) || (mask.c, mask.h, mask.w) != (1, g, g) {
        return Err(Error::ShapeMismatch(format!(
            "expected 1×{n}×{n} image and 1×{g}×{g} mask channels"
        )));
    }
    let mut down = Vec::with_capacity(layout.down.len());
    let mut x = input.clone();
    for u in &layout.down {
        let c = u.forward(&x, wt);
        x = c.out.clone();
        down.push(c);
    }
    check(&x, "downsampling")?;
    let x = Tensor::concat(&[&x, mask]);
    let attn = layout.attn.forward(&x, wt);
    let stem = layout.stem.forward(&attn.out, wt);
    let mut x = stem.out.clone();
    check(&x, "attention")?;
    let mut res = Vec::with_capacity(layout.res.len());
    for u in &layout.res {
        let a = u.a.forward(&x, wt);
        let b = u.b.forward(&a.out, wt);
        let mut out = b.out.clone();
        out.add_assign(&x);
        relu_forward(&mut out);
        x = out.clone();
        res.push(ResCache { a, b, out });
    }
    check(&x, "residual")?;
    let p = &layout.pyramid;
    let branches: Vec<CnrCache> = p.branches.iter().map(|u| u.forward(&x, wt)).collect();
    let (pooled, gap) = match &p.gap {
        Some(lin) => {
            let pooled: Vec<f64> = (0..x.c).map(|c| x.plane(c).iter().sum::<f64>() / x.plane_len() as f64).collect();
            let mut gap = linear_forward(&wt.tensors[lin.w], &wt.tensors[lin.b], &pooled, lin.co, 1);
            gap.iter_mut().for_each(|v| *v = v.max(0.0));
            (pooled, gap)
        }
        None => (Vec::new(), Vec::new()),
    };
    let mut parts: Vec<&Tensor> = branches.iter().map(|b| &b.out).collect();
    let gap_t = Tensor::new(
        gap.len(),
        x.h,
        x.w,
        gap.iter().flat_map(|v| std::iter::repeat_n(*v, x.plane_len())).collect(),
    );
    if p.gap.is_some() {
        parts.push(&gap_t);
    }
    let fuse = p.fuse.forward(&Tensor::concat(&parts), wt);
    check(&fuse.out, "pyramid")?;
    let head_attn = layout.head_attn.forward(&fuse.out, wt);
    let head = layout.head.forward(&head_attn.out, wt);
    let bias = layout.out.b.map(|b| wt.tensors[b].as_slice());
    let (mut output, out) = conv_forward(&head.out, &wt.tensors[layout.out.w], bias, 2, POINT);
    output.data.iter_mut().for_each(|v| *v *= config.output_scale);
    check(&output, "head")?;
    Ok(Trace {
        down,
        attn,
        stem,
        res,
        pyramid: PyramidCache { branches, pooled, gap, fuse },
        head_attn,
        head,
        out,
        output_scale: config.output_scale,
        block_size: config.block_size,
        output,
    })
}

/// Estimated distortion field for one image.
pub fn forward(params: &NetworkParams, image: &GrayImage, mask: &FingerMask) -> Result<DistortionField> {
    params.check_layout()?;
    let (input, m) = prepare_input(&params.config, image, mask)?;
    Ok(forward_traced(&params.config, &Weights::from_params(params), &input, &m)?.field())
}

/// Parameter gradients given `d_output`, the loss gradient w.r.t. the
/// two-channel output.
pub fn backward_from_output(config: &NetworkConfig, wt: &Weights, trace: &Trace, d_output: &Tensor) -> Result<Gradients> {
    let layout = Layout::new(config);
    let mut g = Gradients { tensors: wt.tensors.iter().map(|t| vec![0.0; t.len()]).collect() };
    let mut dy = d_output.clone();
    dy.data.iter_mut().for_each(|v| *v *= trace.output_scale);
    let (dw, db) = two_mut(&mut g.tensors, layout.out.w, layout.out.b.expect("output bias"));
    let dx = conv_backward(&dy, &trace.out, &wt.tensors[layout.out.w], POINT, dw, Some(db), true).unwrap();
    let dx = layout.head.backward(dx, &trace.head, wt, &mut g, true).unwrap();
    let dx = layout.head_attn.backward(&dx, &trace.head_attn, wt, &mut g);

    let p = &layout.pyramid;
    let pc = &trace.pyramid;
    let dcat = p.fuse.backward(dx, &pc.fuse, wt, &mut g, true).unwrap();
    let a = config.pyramid_channels();
    let mut widths = vec![a; p.branches.len()];
    if p.gap.is_some() {
        widths.push(a);
    }
    let parts = dcat.split(&widths);
    let mut dx: Option<Tensor> = None;
    for ((u, c), d) in p.branches.iter().zip(&pc.branches).zip(&parts) {
        let t = u.backward(d.clone(), c, wt, &mut g, true).unwrap();
        match &mut dx {
            Some(acc) => acc.add_assign(&t),
            None => dx = Some(t),
        }
    }
    let mut dx = dx.expect("at least one branch");
    if let Some(lin) = &p.gap {
        let dgt = &parts[parts.len() - 1];
        let mut dgap: Vec<f64> = (0..dgt.c).map(|c| dgt.plane(c).iter().sum()).collect();
        dgap.iter_mut().zip(&pc.gap).for_each(|(d, v)| {
            if *v <= 0.0 {
                *d = 0.0
            }
        });
        let (dw, db) = two_mut(&mut g.tensors, lin.w, lin.b);
        let dpool = linear_backward(&dgap, &pc.pooled, &wt.tensors[lin.w], lin.co, 1, dw, db);
        let n = dx.plane_len() as f64;
        for c in 0..dx.c {
            let s = dpool[c] / n;
            let plane_len = dx.plane_len();
            dx.data[c * plane_len..(c + 1) * plane_len].iter_mut().for_each(|v| *v += s);
        }
    }

    for (u, c) in layout.res.iter().zip(&trace.res).rev() {
        let mut dsum = dx;
        relu_backward(&mut dsum, &c.out);
        let d = u.b.backward(dsum.clone(), &c.b, wt, &mut g, true).unwrap();
        let mut d = u.a.backward(d, &c.a, wt, &mut g, true).unwrap();
        d.add_assign(&dsum);
        dx = d;
    }
    let dx = layout.stem.backward(dx, &trace.stem, wt, &mut g, true).unwrap();
    let dx = layout.attn.backward(&dx, &trace.attn, wt, &mut g);
    let feat = config.feature_channels();
    let mut dx = dx.split(&[feat, 1]).swap_remove(0);
    for (k, (u, c)) in layout.down.iter().zip(&trace.down).enumerate().rev() {
        match u.backward(dx, c, wt, &mut g, k > 0) {
            Some(t) => dx = t,
            None => break,
        }
    }
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient("parameter gradient".into()));
    }
    Ok(g)
}

/// Loss gradient w.r.t. the output tensor.
pub fn output_gradient(est: &DistortionField, gt: &DistortionField, mask: &GridMask, lambda_smo: f64) -> Result<Tensor> {
    let d = crate::nn::loss::loss_total_gradient(est, gt, mask, lambda_smo)?;
    let g = d.len();
    let mut t = Tensor::zeros(2, est.grid_h(), est.grid_w());
    for (k, v) in d.iter().enumerate() {
        t.data[k] = v.x;
        t.data[g + k] = v.y;
    }
    Ok(t)
}

/// Loss and parameter gradients for one sample.
pub fn loss_and_gradient(
    config: &NetworkConfig,
    wt: &Weights,
    input: &Tensor,
    mask_channel: &Tensor,
    gt: &DistortionField,
    grid_mask: &GridMask,
    lambda_smo: f64,
) -> Result<(LossBreakdown, Gradients)> {
    let trace = forward_traced(config, wt, input, mask_channel)?;
    let est = trace.field();
    let loss = loss_total(&est, gt, grid_mask, lambda_smo)?;
    let d = output_gradient(&est, gt, grid_mask, lambda_smo)?;
    let grads = backward_from_output(config, wt, &trace, &d)?;
    Ok((loss, grads))
}

/// Gradients of `loss_total` w.r.t. every parameter tensor for one sample.
pub fn backward(
    params: &NetworkParams,
    image: &GrayImage,
    mask: &FingerMask,
    gt: &DistortionField,
    lambda_smo: f64,
) -> Result<Gradients> {
    params.check_layout()?;
    let (input, m) = prepare_input(&params.config, image, mask)?;
    let grid_mask = mask.to_grid(params.config.block_size);
    gt.check_mask(&grid_mask)?;
    let (_, g) = loss_and_gradient(&params.config, &Weights::from_params(params), &input, &m, gt, &grid_mask, lambda_smo)?;
    Ok(g)
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        return i;
    }
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n { k } else { period - k }
}

/// Field estimate for an image of any size: the image is reflect-padded to
/// a square whose side is a multiple of the block size (mask padded with
/// background), and the output grid is cropped back to the original extent.
pub fn forward_any_size(params: &NetworkParams, image: &GrayImage, mask: &FingerMask) -> Result<DistortionField> {
    params.check_layout()?;
    crate::raster::check_same_size(image, mask)?;
    let b = params.config.block_size;
    let (w, h) = (image.width(), image.height());
    let side = w.max(h).div_ceil(b) * b;
    let padded = GrayImage::from_fn(side, side, |x, y| image.get(reflect(x, w), reflect(y, h)));
    let pmask = FingerMask::from_fn(side, side, |x, y| x < w && y < h && mask.get(x, y));
    let mut config = params.config.clone();
    config.input_size = side;
    let (input, m) = prepare_input(&config, &padded, &pmask)?;
    let full = forward_traced(&config, &Weights::from_params(params), &input, &m)?.field();
    let (gw, gh) = (w.div_ceil(b), h.div_ceil(b));
    let v = (0..gh).flat_map(|j| (0..gw).map(move |i| (i, j))).map(|(i, j)| full.get(i, j)).collect();
    DistortionField::new(gw, gh, b, v)
}
