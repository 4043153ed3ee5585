use super::{gelu_grad, gemm, image_dims, row_stats, Axis, Graph, Op, Tensor, Unary, Var};
use crate::error::{bail, Result};
use crate::scene::sigmoid;
use alloc::vec;
use alloc::vec::Vec;

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` does not depend on any parameter.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` with its shape; zeros when `v` did not contribute.
    pub fn tensor(&self, graph: &Graph, v: Var) -> Tensor {
        let shape = graph.value(v).shape().to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches its node"),
            None => Tensor::zeros(shape),
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], needs: &[bool], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    if !needs[v.0] {
        return;
    }
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Graph {
    /// Reverse-mode gradients of the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", self.value(loss).shape());
        }
        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if needs[loss.0] {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads, &needs);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], needs: &[bool]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let n = g.len();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, needs, *a, n, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(grads, needs, *b, n, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(grads, needs, *a, n, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(grads, needs, *b, n, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(grads, needs, *a, n, |d| {
                    for i in 0..n {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(grads, needs, *b, n, |d| {
                    for i in 0..n {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let vb = val(*b).data();
                let o = out.data();
                acc(grads, needs, *a, n, |d| {
                    for i in 0..n {
                        d[i] += g[i] / vb[i];
                    }
                });
                acc(grads, needs, *b, n, |d| {
                    for i in 0..n {
                        d[i] -= g[i] * o[i] / vb[i];
                    }
                });
            }
            Op::AddRow(x, r) | Op::MulRow(x, r) => {
                let is_mul = matches!(node.op, Op::MulRow(..));
                let cols = val(*r).len();
                let (vx, vr) = (val(*x).data(), val(*r).data());
                acc(grads, needs, *x, n, |d| {
                    for i in 0..n {
                        d[i] += if is_mul { g[i] * vr[i % cols] } else { g[i] };
                    }
                });
                acc(grads, needs, *r, cols, |d| {
                    for i in 0..n {
                        d[i % cols] += if is_mul { g[i] * vx[i] } else { g[i] };
                    }
                });
            }
            Op::Scale(x, s) => acc(grads, needs, *x, n, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)),
            Op::Offset(x) | Op::Reshape(x) => {
                acc(grads, needs, *x, n, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g))
            }
            Op::Unary(x, u) => {
                let (vx, o) = (val(*x).data(), out.data());
                acc(grads, needs, *x, n, |d| {
                    for i in 0..n {
                        let local = match u {
                            Unary::Tanh => 1.0 - o[i] * o[i],
                            Unary::Sigmoid => o[i] * (1.0 - o[i]),
                            Unary::Softplus => sigmoid(vx[i]),
                            Unary::Gelu => gelu_grad(vx[i]),
                            Unary::Sqrt => 0.5 / o[i],
                            Unary::Abs => {
                                if vx[i] > 0.0 {
                                    1.0
                                } else if vx[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => o[i],
                            Unary::Square => 2.0 * vx[i],
                        };
                        d[i] += g[i] * local;
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let vx = val(*x).data();
                acc(grads, needs, *x, n, |d| {
                    for i in 0..n {
                        if vx[i] >= *lo && vx[i] <= *hi {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                acc(grads, needs, *a, m * k, |d| gemm(m, nn, k, g, false, tb.data(), true, d, true));
                acc(grads, needs, *b, k * nn, |d| gemm(k, m, nn, ta.data(), true, g, false, d, true));
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, nn) = (ta.rows(), ta.cols(), tb.rows());
                acc(grads, needs, *a, m * k, |d| gemm(m, nn, k, g, false, tb.data(), false, d, true));
                acc(grads, needs, *b, nn * k, |d| gemm(nn, m, k, g, true, ta.data(), false, d, true));
            }
            Op::Transpose(x) => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                acc(grads, needs, *x, n, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let len = val(*x).len();
                acc(grads, needs, *x, len, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(x) => {
                let len = val(*x).len();
                let s = g[0] / len as f64;
                acc(grads, needs, *x, len, |d| d.iter_mut().for_each(|d| *d += s));
            }
            Op::SliceCols(x, start) => {
                let (len, cols) = (val(*x).len(), val(*x).cols());
                let w = out.cols();
                acc(grads, needs, *x, len, |d| {
                    for (r, gr) in g.chunks_exact(w).enumerate() {
                        for (j, gv) in gr.iter().enumerate() {
                            d[r * cols + start + j] += gv;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let cols = out.cols();
                let mut off = 0;
                for p in parts {
                    let (len, w) = (val(*p).len(), val(*p).cols());
                    acc(grads, needs, *p, len, |d| {
                        for (r, dr) in d.chunks_exact_mut(w).enumerate() {
                            for (j, dv) in dr.iter_mut().enumerate() {
                                *dv += g[r * cols + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceRows(x, start) => {
                let (len, cols) = (val(*x).len(), val(*x).cols());
                acc(grads, needs, *x, len, |d| {
                    d[start * cols..start * cols + n].iter_mut().zip(g).for_each(|(d, g)| *d += g)
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(grads, needs, *p, len, |d| d.iter_mut().zip(&g[off..off + len]).for_each(|(d, g)| *d += g));
                    off += len;
                }
            }
            Op::SoftmaxRows(x) => {
                let cols = out.cols();
                acc(grads, needs, *x, n, |d| {
                    for ((dr, yr), gr) in d.chunks_exact_mut(cols).zip(out.data().chunks_exact(cols)).zip(g.chunks_exact(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..cols {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNormRows(x) => {
                let cols = out.cols();
                let vx = val(*x).data();
                acc(grads, needs, *x, n, |d| {
                    for r in 0..n / cols {
                        let span = r * cols..(r + 1) * cols;
                        let (_, inv) = row_stats(&vx[span.clone()]);
                        let (yr, gr) = (&out.data()[span.clone()], &g[span.clone()]);
                        let mg = gr.iter().sum::<f64>() / cols as f64;
                        let mgy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / cols as f64;
                        for (j, dv) in d[span].iter_mut().enumerate() {
                            *dv += inv * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                });
            }
            Op::RowNormalize(x) => {
                let cols = out.cols();
                let vx = val(*x).data();
                acc(grads, needs, *x, n, |d| {
                    for r in 0..n / cols {
                        let span = r * cols..(r + 1) * cols;
                        let norm = libm::sqrt(vx[span.clone()].iter().map(|v| v * v).sum::<f64>());
                        let (yr, gr) = (&out.data()[span.clone()], &g[span.clone()]);
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for (j, dv) in d[span].iter_mut().enumerate() {
                            *dv += (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::Conv(x, kernel, axis) => {
                let [h, w, c] = image_dims(val(*x)).expect("checked at construction");
                let r = (kernel.len() / 2) as isize;
                acc(grads, needs, *x, n, |d| {
                    for y in 0..h {
                        for xi in 0..w {
                            for (k, &wk) in kernel.iter().enumerate() {
                                let off = k as isize - r;
                                let (sy, sx) = match axis {
                                    Axis::Y => ((y as isize + off).clamp(0, h as isize - 1) as usize, xi),
                                    Axis::X => (y, (xi as isize + off).clamp(0, w as isize - 1) as usize),
                                };
                                let (dst, src) = ((y * w + xi) * c, (sy * w + sx) * c);
                                for ch in 0..c {
                                    d[src + ch] += wk * g[dst + ch];
                                }
                            }
                        }
                    }
                });
            }
            Op::AreaDown(x, factor) => {
                let [h, w, c] = image_dims(val(*x)).expect("checked at construction");
                let ow = w / factor;
                let norm = 1.0 / (factor * factor) as f64;
                acc(grads, needs, *x, h * w * c, |d| {
                    for y in 0..h {
                        for xi in 0..w {
                            let (dst, src) = (((y / factor) * ow + xi / factor) * c, (y * w + xi) * c);
                            for ch in 0..c {
                                d[src + ch] += norm * g[dst + ch];
                            }
                        }
                    }
                });
            }
            Op::Custom(inputs, op) => {
                if !inputs.iter().any(|v| needs[v.0]) {
                    return;
                }
                let vals: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gin = op.backward(&vals, out, g);
                for (v, gi) in inputs.iter().zip(gin) {
                    let len = val(*v).len();
                    debug_assert_eq!(gi.len(), len);
                    acc(grads, needs, *v, len, |d| d.iter_mut().zip(&gi).for_each(|(d, g)| *d += g));
                }
            }
        }
    }
}
