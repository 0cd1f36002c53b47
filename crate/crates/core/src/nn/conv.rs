//! 3x3 convolution and transposed convolution with hand-written gradients.

use rand::Rng;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Glorot-uniform sample rounded to single precision.
pub(crate) fn glorot<R: Rng>(rng: &mut R, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| f64::from(rng.gen_range(-limit..limit) as f32))
        .collect()
}

/// `out[j] += sum_t w[t] * src[j + offs[t]]`, taps summed in order.
fn fused_taps(w: &[f64; TAPS], offs: &[usize; TAPS], src: &[f64], out: &mut [f64]) {
    let n = out.len();
    let [s0, s1, s2, s3, s4, s5, s6, s7, s8]: [&[f64]; TAPS] = std::array::from_fn(|t| &src[offs[t]..offs[t] + n]);
    let (s0, s1, s2, s3, s4, s5, s6, s7, s8) =
        (&s0[..n], &s1[..n], &s2[..n], &s3[..n], &s4[..n], &s5[..n], &s6[..n], &s7[..n], &s8[..n]);
    for j in 0..n {
        out[j] += w[0] * s0[j]
            + w[1] * s1[j]
            + w[2] * s2[j]
            + w[3] * s3[j]
            + w[4] * s4[j]
            + w[5] * s5[j]
            + w[6] * s6[j]
            + w[7] * s7[j]
            + w[8] * s8[j];
    }
}

const LANES: usize = 8;

/// `[sum_j g[j] * src[j + offs[t]] for each tap]`, eight fixed lanes per tap.
fn fused_dots(g: &[f64], offs: &[usize; TAPS], src: &[f64]) -> [f64; TAPS] {
    let n = g.len();
    let full = n / LANES * LANES;
    let s: [&[f64]; TAPS] = std::array::from_fn(|t| &src[offs[t]..offs[t] + n]);
    let mut acc = [[0.0; LANES]; TAPS];
    for (c, gv) in g[..full].chunks_exact(LANES).enumerate() {
        let b = c * LANES;
        for t in 0..TAPS {
            let x = &s[t][b..b + LANES];
            for l in 0..LANES {
                acc[t][l] += gv[l] * x[l];
            }
        }
    }
    std::array::from_fn(|t| {
        let a = &acc[t];
        let tail: f64 = (full..n).map(|j| g[j] * s[t][j]).sum();
        ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7])) + tail
    })
}

/// Gradients of one convolution layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// 3x3 convolution, weights laid out `out x in x 3 x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn glorot<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let weight = glorot(
            rng,
            out_channels * in_channels * TAPS,
            in_channels * TAPS,
            out_channels * TAPS,
        );
        Self {
            weight,
            ..Self::zeros(in_channels, out_channels, stride, padding)
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = 2 * self.padding;
        (
            (h + p - KERNEL) / self.stride + 1,
            (w + p - KERNEL) / self.stride + 1,
        )
    }

    #[inline]
    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * KERNEL + ky) * KERNEL + kx
    }

    #[inline]
    fn taps(&self, o: usize, i: usize) -> &[f64; TAPS] {
        let base = (o * self.in_channels + i) * TAPS;
        self.weight[base..base + TAPS].try_into().expect("3x3 kernel")
    }

    /// Pre-activation output, `out_channels x oh x ow`.
    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_channels * h * w);
        if self.stride == 1 {
            return self.forward_s1(input, h, w);
        }
        let (oh, ow) = self.output_size(h, w);
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
            plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input[i * h * w..(i + 1) * h * w];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = self.weight[self.w_index(o, i, ky, kx)];
                        self.tap_forward(src, h, w, plane, oh, ow, ky, kx, wv);
                    }
                }
            }
        }
        out
    }

    /// Stride 1 on zero-padded planes. Output rows are accumulated at the
    /// padded row pitch, so every tap is one contiguous axpy; the two
    /// spill-over columns per row are dropped afterwards.
    fn forward_s1(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let p = self.padding;
        let (oh, ow) = self.output_size(h, w);
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let padded = pad_planes(input, self.in_channels, h, w, p);
        let span = oh * pw - (KERNEL - 1);
        let offs = tap_offsets(pw);
        let mut wide = vec![0.0; oh * pw];
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
            wide.fill(0.0);
            for i in 0..self.in_channels {
                let src = &padded[i * ph * pw..(i + 1) * ph * pw];
                fused_taps(self.taps(o, i), &offs, src, &mut wide[..span]);
            }
            let b = self.bias[o];
            for (dst, row) in plane.chunks_exact_mut(ow).zip(wide.chunks_exact(pw)) {
                for (d, v) in dst.iter_mut().zip(row) {
                    *d = b + v;
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn tap_forward(
        &self,
        src: &[f64],
        h: usize,
        w: usize,
        plane: &mut [f64],
        oh: usize,
        ow: usize,
        ky: usize,
        kx: usize,
        wv: f64,
    ) {
        let (s, p) = (self.stride, self.padding);
        for y in 0..oh {
            let iy = (y * s + ky) as isize - p as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let row = &src[iy as usize * w..(iy as usize + 1) * w];
            for x in 0..ow {
                let ix = (x * s + kx) as isize - p as isize;
                if ix >= 0 && ix < w as isize {
                    plane[y * ow + x] += wv * row[ix as usize];
                }
            }
        }
    }

    /// Gradients given the layer input and the gradient of its
    /// pre-activation output.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        need_input: bool,
    ) -> LayerGrads {
        let (oh, ow) = self.output_size(h, w);
        debug_assert_eq!(grad_out.len(), self.out_channels * oh * ow);
        if self.stride == 1 {
            return self.backward_s1(input, h, w, grad_out, need_input);
        }
        let (s, p) = (self.stride, self.padding);
        let mut gw = vec![0.0; self.weight.len()];
        let mut gi = need_input.then(|| vec![0.0; input.len()]);
        let gb: Vec<f64> = grad_out
            .chunks_exact(oh * ow)
            .map(|plane| plane.iter().sum())
            .collect();

        for o in 0..self.out_channels {
            let go = &grad_out[o * oh * ow..(o + 1) * oh * ow];
            for i in 0..self.in_channels {
                let src = &input[i * h * w..(i + 1) * h * w];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let widx = self.w_index(o, i, ky, kx);
                        let wv = self.weight[widx];
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let iy = (y * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for x in 0..ow {
                                let ix = (x * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let ix = ix as usize;
                                let g = go[y * ow + x];
                                acc += g * src[iy * w + ix];
                                if let Some(gi) = gi.as_mut() {
                                    gi[(i * h + iy) * w + ix] += wv * g;
                                }
                            }
                        }
                        gw[widx] = acc;
                    }
                }
            }
        }
        LayerGrads {
            input: gi,
            weight: gw,
            bias: gb,
        }
    }

    fn backward_s1(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        need_input: bool,
    ) -> LayerGrads {
        let p = self.padding;
        let (oh, ow) = self.output_size(h, w);
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let padded = pad_planes(input, self.in_channels, h, w, p);
        let span = oh * pw - (KERNEL - 1);
        let mut gw = vec![0.0; self.weight.len()];
        let mut gi_pad = need_input.then(|| vec![0.0; self.in_channels * ph * pw]);
        let gb: Vec<f64> = grad_out
            .chunks_exact(oh * ow)
            .map(|plane| plane.iter().sum())
            .collect();
        let offs = tap_offsets(pw);
        // input gradient as a gather: flipped offsets into a zero-extended copy
        let reach = offs[TAPS - 1];
        let flipped: [usize; TAPS] = std::array::from_fn(|t| reach - offs[t]);
        let mut ext = vec![0.0; ph * pw + reach];
        for (o, go) in grad_out.chunks_exact(oh * ow).enumerate() {
            for (row, src) in ext[reach..reach + oh * pw].chunks_exact_mut(pw).zip(go.chunks_exact(ow)) {
                row[..ow].copy_from_slice(src);
            }
            let g = &ext[reach..reach + span];
            for i in 0..self.in_channels {
                let src = &padded[i * ph * pw..(i + 1) * ph * pw];
                let base = (o * self.in_channels + i) * TAPS;
                gw[base..base + TAPS].copy_from_slice(&fused_dots(g, &offs, src));
                if let Some(gp) = gi_pad.as_mut() {
                    let dst = &mut gp[i * ph * pw..(i + 1) * ph * pw];
                    fused_taps(self.taps(o, i), &flipped, &ext, dst);
                }
            }
        }
        let input_grad = gi_pad.map(|gp| {
            let mut gi = vec![0.0; input.len()];
            for i in 0..self.in_channels {
                for y in 0..h {
                    let from = (i * ph + y + p) * pw + p;
                    gi[(i * h + y) * w..(i * h + y + 1) * w].copy_from_slice(&gp[from..from + w]);
                }
            }
            gi
        });
        LayerGrads {
            input: input_grad,
            weight: gw,
            bias: gb,
        }
    }
}

/// Flat offsets of the 3x3 taps in a plane with row pitch `pitch`.
fn tap_offsets(pitch: usize) -> [usize; TAPS] {
    std::array::from_fn(|t| (t / KERNEL) * pitch + t % KERNEL)
}

/// Zero-pads each `h x w` plane by `p` on every side.
fn pad_planes(data: &[f64], planes: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; planes * ph * pw];
    for c in 0..planes {
        for y in 0..h {
            let to = (c * ph + y + p) * pw + p;
            out[to..to + w].copy_from_slice(&data[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
    out
}

/// 3x3 transposed convolution, weights laid out `in x out x 3 x 3`.
///
/// Input pixel `(iy, ix)` scatters to output rows `iy * stride - padding + ky`.
/// The output extent is chosen by the caller; scattered positions outside it
/// are cropped and positions no input reaches hold only the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvTranspose2d {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            padding,
            weight: vec![0.0; in_channels * out_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn glorot<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let weight = glorot(
            rng,
            in_channels * out_channels * TAPS,
            in_channels * TAPS,
            out_channels * TAPS,
        );
        Self {
            weight,
            ..Self::zeros(in_channels, out_channels, stride, padding)
        }
    }

    #[inline]
    fn w_index(&self, i: usize, o: usize, ky: usize, kx: usize) -> usize {
        ((i * self.out_channels + o) * KERNEL + ky) * KERNEL + kx
    }

    #[inline]
    fn target(&self, in_pos: usize, k: usize, out_len: usize) -> Option<usize> {
        let t = (in_pos * self.stride + k) as isize - self.padding as isize;
        (t >= 0 && (t as usize) < out_len).then_some(t as usize)
    }

    pub fn forward(&self, input: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_channels * h * w);
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
            plane.fill(self.bias[o]);
        }
        for i in 0..self.in_channels {
            for iy in 0..h {
                for ix in 0..w {
                    let v = input[(i * h + iy) * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for o in 0..self.out_channels {
                        for ky in 0..KERNEL {
                            let Some(y) = self.target(iy, ky, oh) else { continue };
                            for kx in 0..KERNEL {
                                let Some(x) = self.target(ix, kx, ow) else { continue };
                                out[(o * oh + y) * ow + x] += v * self.weight[self.w_index(i, o, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
        grad_out: &[f64],
        need_input: bool,
    ) -> LayerGrads {
        let mut gw = vec![0.0; self.weight.len()];
        let mut gi = need_input.then(|| vec![0.0; input.len()]);
        let gb = grad_out
            .chunks_exact(oh * ow)
            .map(|plane| plane.iter().sum())
            .collect();
        for i in 0..self.in_channels {
            for iy in 0..h {
                for ix in 0..w {
                    let v = input[(i * h + iy) * w + ix];
                    let mut back = 0.0;
                    for o in 0..self.out_channels {
                        for ky in 0..KERNEL {
                            let Some(y) = self.target(iy, ky, oh) else { continue };
                            for kx in 0..KERNEL {
                                let Some(x) = self.target(ix, kx, ow) else { continue };
                                let g = grad_out[(o * oh + y) * ow + x];
                                let widx = self.w_index(i, o, ky, kx);
                                gw[widx] += v * g;
                                back += self.weight[widx] * g;
                            }
                        }
                    }
                    if let Some(gi) = gi.as_mut() {
                        gi[(i * h + iy) * w + ix] = back;
                    }
                }
            }
        }
        LayerGrads {
            input: gi,
            weight: gw,
            bias: gb,
        }
    }
}
