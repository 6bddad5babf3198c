//! Small convolutional classifier with hand-written backpropagation.
//!
//! Activations are stored channel-major, `(channels, batch, height, width)`, so
//! each 3x3 convolution is one GEMM between the weight matrix and an im2col
//! buffer covering the whole batch.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask_ops::Image;

/// Per-channel affine standardization applied at the model input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
    const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

    /// ImageNet statistics; grayscale inputs use the channel averages.
    pub fn imagenet(channels: usize) -> Self {
        if channels == 3 {
            Self {
                mean: Self::IMAGENET_MEAN.to_vec(),
                std: Self::IMAGENET_STD.to_vec(),
            }
        } else {
            let avg = |v: [f32; 3]| v.iter().sum::<f32>() / 3.0;
            Self {
                mean: vec![avg(Self::IMAGENET_MEAN); channels],
                std: vec![avg(Self::IMAGENET_STD); channels],
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub input_size: usize,
    /// Average-pooling factor applied to the input before the first block.
    pub stem_pool: usize,
    /// Output channels of each conv block (3x3 conv, ReLU, 2x2 max-pool).
    pub channels: Vec<usize>,
    pub n_classes: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.n_classes == 0 || self.in_channels == 0 || self.stem_pool == 0 {
            return Err(Error::InvalidArgument(format!("invalid network spec {self:?}")));
        }
        let mut side = self.input_size / self.stem_pool;
        for _ in &self.channels {
            side /= 2;
        }
        if side == 0 || self.input_size % self.stem_pool != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} too small for stem pool {} and {} blocks",
                self.input_size,
                self.stem_pool,
                self.channels.len()
            )));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    fn block_inputs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (in_channels, out_channels, spatial side at block input)
        let mut cin = self.in_channels;
        let mut side = self.input_size / self.stem_pool;
        self.channels.iter().map(move |&cout| {
            let out = (cin, cout, side);
            cin = cout;
            side /= 2;
            out
        })
    }

    fn param_layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (cin, cout, _) in self.block_inputs() {
            let w = cout * cin * 9;
            blocks.push(ParamBlock {
                weight: offset,
                rows: cout,
                cols: cin * 9,
                bias: offset + w,
            });
            offset += w + cout;
        }
        let e = self.embedding_dim();
        blocks.push(ParamBlock {
            weight: offset,
            rows: self.n_classes,
            cols: e,
            bias: offset + self.n_classes * e,
        });
        blocks
    }

    pub fn n_params(&self) -> usize {
        let last = *self.param_layout().last().expect("head block");
        last.bias + last.rows
    }
}

#[derive(Clone, Copy, Debug)]
struct ParamBlock {
    weight: usize,
    rows: usize,
    cols: usize,
    bias: usize,
}

impl ParamBlock {
    fn end(&self) -> usize {
        self.bias + self.rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub normalization: Normalization,
    params: Vec<f32>,
}

/// Activations kept from the forward pass for backpropagation.
struct BlockCache {
    col: Array2<f32>,
    pre_relu_positive: Vec<bool>,
    argmax: Vec<u32>,
    out_side: usize,
}

pub(crate) struct ForwardCache {
    blocks: Vec<BlockCache>,
    pub embeddings: Array2<f32>,
    pub logits: Array2<f32>,
    final_side: usize,
}

impl Network {
    pub fn new(spec: NetworkSpec, normalization: Normalization, seed: u64) -> Result<Self> {
        spec.validate()?;
        if normalization.mean.len() != spec.in_channels || normalization.std.len() != spec.in_channels {
            return Err(Error::InvalidArgument("normalization does not match input channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; spec.n_params()];
        for b in spec.param_layout() {
            // He initialization for conv blocks and the head alike
            let std = (2.0 / b.cols as f32).sqrt();
            let normal = Normal::new(0.0f32, std).expect("positive std");
            for p in &mut params[b.weight..b.bias] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            spec,
            normalization,
            params,
        })
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// Parameter index range of every conv block except the last; frozen when
    /// training only the final block and the head.
    pub fn frozen_prefix_range(&self) -> std::ops::Range<usize> {
        let layout = self.spec.param_layout();
        let n_conv = self.spec.channels.len();
        if n_conv < 2 {
            return 0..0;
        }
        0..layout[n_conv - 2].end()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn weight(&self, b: &ParamBlock) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((b.rows, b.cols), &self.params[b.weight..b.bias]).expect("layout")
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        let want = (self.spec.in_channels, self.spec.input_size, self.spec.input_size);
        let got = (img.channels(), img.height(), img.width());
        if want != got {
            return Err(Error::shape(
                format!("image {}x{}x{}", want.0, want.1, want.2),
                format!("image {}x{}x{}", got.0, got.1, got.2),
            ));
        }
        Ok(())
    }

    /// Pooled, standardized input in channel-major layout.
    fn stem(&self, images: &[&Image]) -> Result<Vec<f32>> {
        for img in images {
            self.check_input(img)?;
        }
        let b = images.len();
        let k = self.spec.stem_pool;
        let side = self.spec.input_size / k;
        let c = self.spec.in_channels;
        let mut out = vec![0.0f32; c * b * side * side];
        let inv = 1.0 / (k * k) as f32;
        for ch in 0..c {
            let (mean, std) = (self.normalization.mean[ch], self.normalization.std[ch]);
            for (bi, img) in images.iter().enumerate() {
                let plane = img.channel(ch);
                let dst = &mut out[(ch * b + bi) * side * side..][..side * side];
                for y in 0..side {
                    for x in 0..side {
                        let mut acc = 0.0f32;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += plane[[y * k + dy, x * k + dx]];
                            }
                        }
                        dst[y * side + x] = (acc * inv - mean) / std;
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn forward(&self, images: &[&Image], keep_cache: bool) -> Result<ForwardCache> {
        let b = images.len();
        let layout = self.spec.param_layout();
        let mut act = self.stem(images)?;
        let mut caches = Vec::new();
        let mut side = self.spec.input_size / self.spec.stem_pool;
        for (bi, (cin, cout, s_in)) in self.spec.block_inputs().enumerate() {
            debug_assert_eq!(s_in, side);
            let pb = &layout[bi];
            let col = im2col(&act, cin, b, side, side);
            let mut z = self.weight(pb).dot(&col);
            let bias = &self.params[pb.bias..pb.bias + cout];
            for (mut row, &bv) in z.axis_iter_mut(Axis(0)).zip(bias) {
                row.mapv_inplace(|v| (v + bv).max(0.0));
            }
            let z = z.into_raw_vec_and_offset().0;
            let (pooled, argmax) = max_pool2(&z, cout * b, side);
            if keep_cache {
                caches.push(BlockCache {
                    col,
                    pre_relu_positive: z.iter().map(|&v| v > 0.0).collect(),
                    argmax,
                    out_side: side / 2,
                });
            }
            act = pooled;
            side /= 2;
        }
        let e = self.spec.embedding_dim();
        let hw = side * side;
        let mut emb = Array2::<f32>::zeros((b, e));
        for c in 0..e {
            for bi in 0..b {
                let plane = &act[(c * b + bi) * hw..][..hw];
                emb[[bi, c]] = plane.iter().sum::<f32>() / hw as f32;
            }
        }
        let head = layout.last().expect("head");
        let mut logits = emb.dot(&self.weight(head).t());
        let hb = &self.params[head.bias..head.bias + self.spec.n_classes];
        for mut row in logits.axis_iter_mut(Axis(0)) {
            row.iter_mut().zip(hb).for_each(|(v, &bv)| *v += bv);
        }
        Ok(ForwardCache {
            blocks: caches,
            embeddings: emb,
            logits,
            final_side: side,
        })
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the logits. Blocks entirely inside
    /// `skip_below` (a parameter index) receive no gradient.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f32>, skip_below: usize) -> Vec<f32> {
        let layout = self.spec.param_layout();
        let mut grad = vec![0.0f32; self.params.len()];
        let b = dlogits.nrows();
        let head = layout.last().expect("head");

        let dw = dlogits.t().dot(&cache.embeddings);
        grad[head.weight..head.bias].copy_from_slice(dw.as_slice().expect("standard layout"));
        for (k, g) in grad[head.bias..head.end()].iter_mut().enumerate() {
            *g = dlogits.column(k).sum();
        }
        let demb = dlogits.dot(&self.weight(head));

        let e = self.spec.embedding_dim();
        let hw = cache.final_side * cache.final_side;
        let mut dact = vec![0.0f32; e * b * hw];
        for c in 0..e {
            for bi in 0..b {
                let g = demb[[bi, c]] / hw as f32;
                dact[(c * b + bi) * hw..][..hw].fill(g);
            }
        }

        let specs: Vec<_> = self.spec.block_inputs().collect();
        for bi in (0..specs.len()).rev() {
            let pb = &layout[bi];
            if pb.end() <= skip_below {
                break;
            }
            let (cin, cout, side) = specs[bi];
            let bc = &cache.blocks[bi];
            debug_assert_eq!(bc.out_side, side / 2);
            let mut dz = vec![0.0f32; cout * b * side * side];
            for (i, &src) in bc.argmax.iter().enumerate() {
                dz[src as usize] += dact[i];
            }
            for (g, &pos) in dz.iter_mut().zip(&bc.pre_relu_positive) {
                if !pos {
                    *g = 0.0;
                }
            }
            let dz = Array2::from_shape_vec((cout, b * side * side), dz).expect("shape");
            let dw = dz.dot(&bc.col.t());
            grad[pb.weight..pb.bias].copy_from_slice(dw.as_slice().expect("standard layout"));
            for (co, g) in grad[pb.bias..pb.end()].iter_mut().enumerate() {
                *g = dz.row(co).sum();
            }
            let needs_input_grad = bi > 0 && layout[bi - 1].end() > skip_below;
            if needs_input_grad {
                let dcol = self.weight(pb).t().dot(&dz);
                dact = col2im(&dcol, cin, b, side, side);
            }
        }
        grad
    }
}

fn im2col(act: &[f32], cin: usize, b: usize, h: usize, w: usize) -> Array2<f32> {
    let plane = h * w;
    let n = b * plane;
    let mut col = Array2::<f32>::zeros((cin * 9, n));
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = col.row_mut(ci * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("contiguous row");
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for bi in 0..b {
                    let src = &act[(ci * b + bi) * plane..][..plane];
                    let dst = &mut row[bi * plane..][..plane];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..][..w];
                        let sx0 = (x0 as isize + dx) as usize;
                        let sx1 = (x1 as isize + dx) as usize;
                        dst[y * w + x0..y * w + x1].copy_from_slice(&srow[sx0..sx1]);
                    }
                }
            }
        }
    }
    col
}

fn col2im(dcol: &Array2<f32>, cin: usize, b: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0.0f32; cin * b * plane];
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = dcol.row(ci * 9 + ky * 3 + kx);
                let row = row.as_slice().expect("contiguous row");
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for bi in 0..b {
                    let src = &row[bi * plane..][..plane];
                    let dst = &mut out[(ci * b + bi) * plane..][..plane];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[sy as usize * w..][..w];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (d, s) in drow[sx0..sx0 + (x1 - x0)].iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2 max-pool over `planes` square planes of side `side`; returns pooled
/// values and the flat source index of each maximum.
fn max_pool2(x: &[f32], planes: usize, side: usize) -> (Vec<f32>, Vec<u32>) {
    let o = side / 2;
    let mut out = Vec::with_capacity(planes * o * o);
    let mut arg = Vec::with_capacity(planes * o * o);
    for p in 0..planes {
        let base = p * side * side;
        for y in 0..o {
            for xx in 0..o {
                let mut best = base + (2 * y) * side + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * side + 2 * xx + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Numerically stable binary cross-entropy with logits.
pub(crate) fn bce_with_logits(z: f32, y: bool) -> f32 {
    let t = if y { 1.0 } else { 0.0 };
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
