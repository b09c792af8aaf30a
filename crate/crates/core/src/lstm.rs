//! LSTM layers, stacks, dropout masks and backpropagation through time.
//!
//! All routines process `rows` independent sequences in lock-step: buffers
//! are step-major, `[step][row][unit]`. Gate blocks are ordered input,
//! forget, cell candidate, output (`i, f, g, o`) in every weight matrix.
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```
//!
//! Dropout scales each layer's output by a per-row mask that is held fixed
//! across all steps of one pass; the recurrent path sees the unmasked `h`.

use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::{gemm_acc, sigmoid, Op, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<F> {
    pub n_in: usize,
    pub n_hidden: usize,
    /// `4h × n_in`, row-major.
    pub w: Vec<F>,
    /// `4h × h`, row-major.
    pub u: Vec<F>,
    /// `4h`.
    pub b: Vec<F>,
}

impl<F: Scalar> LstmLayer<F> {
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        LstmLayer {
            n_in,
            n_hidden,
            w: alloc::vec![F::zero(); 4 * n_hidden * n_in],
            u: alloc::vec![F::zero(); 4 * n_hidden * n_hidden],
            b: alloc::vec![F::zero(); 4 * n_hidden],
        }
    }

    /// Weights uniform in `±1/√fan_in` per matrix, forget bias 1, other
    /// biases 0.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_hidden: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(n_in, n_hidden);
        let bw = 1.0 / num_traits::Float::sqrt(n_in as f64);
        let bu = 1.0 / num_traits::Float::sqrt(n_hidden as f64);
        for v in &mut layer.w {
            *v = F::from_f64(rng.gen_range(-bw..bw));
        }
        for v in &mut layer.u {
            *v = F::from_f64(rng.gen_range(-bu..bu));
        }
        for v in &mut layer.b[n_hidden..2 * n_hidden] {
            *v = F::one();
        }
        layer
    }

    /// One step of one sequence.
    pub fn cell_forward(
        &self,
        x: &[F],
        state: &CellState<F>,
    ) -> (Vec<F>, CellState<F>, LayerCache<F>) {
        let stack = LstmStack {
            layers: alloc::vec![self.clone()],
        };
        let init = LstmState {
            rows: 1,
            h: alloc::vec![state.h.clone()],
            c: alloc::vec![state.c.clone()],
        };
        let mut out = stack.forward(x, 1, 1, None, Some(&init), true);
        let cache = out.cache.take().unwrap().layers.pop().unwrap();
        let next = CellState {
            h: out.state.h.pop().unwrap(),
            c: out.state.c.pop().unwrap(),
        };
        (out.output, next, cache)
    }

    fn forward_layer(
        &self,
        x: &[F],
        steps: usize,
        rows: usize,
        h0: &[F],
        c0: &[F],
    ) -> LayerCache<F> {
        let h = self.n_hidden;
        let g4 = 4 * h;
        assert_eq!(x.len(), steps * rows * self.n_in, "layer input size");
        let mut gates = alloc::vec![F::zero(); steps * rows * g4];
        gemm_acc(
            steps * rows,
            self.n_in,
            g4,
            x,
            Op::N,
            &self.w,
            Op::T,
            &mut gates,
        );
        let mut cs = alloc::vec![F::zero(); steps * rows * h];
        let mut tcs = alloc::vec![F::zero(); steps * rows * h];
        let mut hs = alloc::vec![F::zero(); steps * rows * h];

        for s in 0..steps {
            let (h_prev, c_prev): (&[F], &[F]) = if s == 0 {
                (h0, c0)
            } else {
                (
                    &hs[(s - 1) * rows * h..s * rows * h],
                    &cs[(s - 1) * rows * h..s * rows * h],
                )
            };
            let z = &mut gates[s * rows * g4..(s + 1) * rows * g4];
            gemm_acc(rows, h, g4, h_prev, Op::N, &self.u, Op::T, z);
            let mut c_new = alloc::vec![F::zero(); rows * h];
            let mut tc_new = alloc::vec![F::zero(); rows * h];
            let mut h_new = alloc::vec![F::zero(); rows * h];
            for r in 0..rows {
                let zr = &mut z[r * g4..(r + 1) * g4];
                for (zv, &bv) in zr.iter_mut().zip(&self.b) {
                    *zv = *zv + bv;
                }
                for j in 0..h {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[h + j]);
                    let g = zr[2 * h + j].tanh();
                    let o = sigmoid(zr[3 * h + j]);
                    zr[j] = i;
                    zr[h + j] = f;
                    zr[2 * h + j] = g;
                    zr[3 * h + j] = o;
                    let c = f * c_prev[r * h + j] + i * g;
                    let tc = c.tanh();
                    c_new[r * h + j] = c;
                    tc_new[r * h + j] = tc;
                    h_new[r * h + j] = o * tc;
                }
            }
            cs[s * rows * h..(s + 1) * rows * h].copy_from_slice(&c_new);
            tcs[s * rows * h..(s + 1) * rows * h].copy_from_slice(&tc_new);
            hs[s * rows * h..(s + 1) * rows * h].copy_from_slice(&h_new);
        }
        LayerCache {
            x: x.to_vec(),
            gates,
            c: cs,
            tanh_c: tcs,
            h: hs,
            h0: h0.to_vec(),
            c0: c0.to_vec(),
        }
    }

    /// BPTT through one layer. `dh_out` is the gradient w.r.t. the raw
    /// (unmasked) hidden outputs; returns the gradient w.r.t. the input.
    fn backward_layer(
        &self,
        cache: &LayerCache<F>,
        steps: usize,
        rows: usize,
        dh_out: &[F],
        grads: &mut LstmLayer<F>,
    ) -> Vec<F> {
        let h = self.n_hidden;
        let g4 = 4 * h;
        let one = F::one();
        let mut dz = alloc::vec![F::zero(); steps * rows * g4];
        let mut dh_next = alloc::vec![F::zero(); rows * h];
        let mut dc_next = alloc::vec![F::zero(); rows * h];

        for s in (0..steps).rev() {
            let base = s * rows * h;
            let c_prev: &[F] = if s == 0 {
                &cache.c0
            } else {
                &cache.c[base - rows * h..base]
            };
            let dzs = &mut dz[s * rows * g4..(s + 1) * rows * g4];
            let gs = &cache.gates[s * rows * g4..(s + 1) * rows * g4];
            for r in 0..rows {
                for j in 0..h {
                    let k = r * h + j;
                    let gi = r * g4;
                    let (i, f, g, o) = (
                        gs[gi + j],
                        gs[gi + h + j],
                        gs[gi + 2 * h + j],
                        gs[gi + 3 * h + j],
                    );
                    let tc = cache.tanh_c[base + k];
                    let dh = dh_out[base + k] + dh_next[k];
                    let d_o = dh * tc;
                    let dc = dh * o * (one - tc * tc) + dc_next[k];
                    dc_next[k] = dc * f;
                    dzs[gi + j] = dc * g * i * (one - i);
                    dzs[gi + h + j] = dc * c_prev[k] * f * (one - f);
                    dzs[gi + 2 * h + j] = dc * i * (one - g * g);
                    dzs[gi + 3 * h + j] = d_o * o * (one - o);
                }
            }
            dh_next.fill(F::zero());
            gemm_acc(rows, g4, h, dzs, Op::N, &self.u, Op::N, &mut dh_next);
        }

        // dU = Σ_s dz[s]ᵀ · h[s-1]
        gemm_acc(
            g4,
            rows,
            h,
            &dz[..rows * g4],
            Op::T,
            &cache.h0,
            Op::N,
            &mut grads.u,
        );
        if steps > 1 {
            let m = (steps - 1) * rows;
            gemm_acc(
                g4,
                m,
                h,
                &dz[rows * g4..],
                Op::T,
                &cache.h[..m * h],
                Op::N,
                &mut grads.u,
            );
        }
        gemm_acc(
            g4,
            steps * rows,
            self.n_in,
            &dz,
            Op::T,
            &cache.x,
            Op::N,
            &mut grads.w,
        );
        for row in dz.chunks_exact(g4) {
            for (db, &d) in grads.b.iter_mut().zip(row) {
                *db = *db + d;
            }
        }
        let mut dx = alloc::vec![F::zero(); steps * rows * self.n_in];
        gemm_acc(
            steps * rows,
            g4,
            self.n_in,
            &dz,
            Op::N,
            &self.w,
            Op::N,
            &mut dx,
        );
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Scalar> CellState<F> {
    pub fn zeros(n_hidden: usize) -> Self {
        CellState {
            h: alloc::vec![F::zero(); n_hidden],
            c: alloc::vec![F::zero(); n_hidden],
        }
    }
}

/// Hidden and cell state of every layer for `rows` sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<F> {
    pub rows: usize,
    /// Per layer, `rows × h` (unmasked).
    pub h: Vec<Vec<F>>,
    pub c: Vec<Vec<F>>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(stack: &LstmStack<F>, rows: usize) -> Self {
        let h: Vec<Vec<F>> = stack
            .layers
            .iter()
            .map(|l| alloc::vec![F::zero(); rows * l.n_hidden])
            .collect();
        LstmState {
            rows,
            c: h.clone(),
            h,
        }
    }
}

/// Per-row output mask, entries `0` or `1/keep_prob`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<F> {
    pub rows: usize,
    pub width: usize,
    pub values: Vec<F>,
}

impl<F: Scalar> DropoutMask<F> {
    pub fn ones(rows: usize, width: usize) -> Self {
        DropoutMask {
            rows,
            width,
            values: alloc::vec![F::one(); rows * width],
        }
    }

    pub fn sample<R: Rng + ?Sized>(rows: usize, width: usize, keep_prob: f64, rng: &mut R) -> Self {
        assert!(
            keep_prob > 0.0 && keep_prob <= 1.0,
            "keep probability must lie in (0, 1]"
        );
        let scale = F::from_f64(1.0 / keep_prob);
        let values = (0..rows * width)
            .map(|_| {
                if keep_prob >= 1.0 || rng.gen::<f64>() < keep_prob {
                    scale
                } else {
                    F::zero()
                }
            })
            .collect();
        DropoutMask {
            rows,
            width,
            values,
        }
    }

    /// One mask per layer of `stack`.
    pub fn sample_stack<R: Rng + ?Sized>(
        stack: &LstmStack<F>,
        rows: usize,
        keep_prob: f64,
        rng: &mut R,
    ) -> Vec<Self> {
        stack
            .layers
            .iter()
            .map(|l| Self::sample(rows, l.n_hidden, keep_prob, rng))
            .collect()
    }
}

/// Values retained from a layer's forward pass.
#[derive(Clone, Debug)]
pub struct LayerCache<F> {
    pub x: Vec<F>,
    /// Activated gates `i, f, g, o`, `[step][row][4h]`.
    pub gates: Vec<F>,
    pub c: Vec<F>,
    pub tanh_c: Vec<F>,
    /// Raw hidden outputs.
    pub h: Vec<F>,
    pub h0: Vec<F>,
    pub c0: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct StackCache<F> {
    pub steps: usize,
    pub rows: usize,
    pub layers: Vec<LayerCache<F>>,
    masks: Option<Vec<DropoutMask<F>>>,
}

#[derive(Clone, Debug)]
pub struct StackOutput<F> {
    /// Masked outputs of the last layer, `[step][row][h_last]`.
    pub output: Vec<F>,
    pub state: LstmState<F>,
    pub cache: Option<StackCache<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack<F> {
    pub layers: Vec<LstmLayer<F>>,
}

impl<F: Scalar> LstmStack<F> {
    pub fn init<R: Rng + ?Sized>(n_in: usize, sizes: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut width = n_in;
        for &h in sizes {
            layers.push(LstmLayer::init(width, h, rng));
            width = h;
        }
        LstmStack { layers }
    }

    pub fn zeros(n_in: usize, sizes: &[usize]) -> Self {
        let mut width = n_in;
        let layers = sizes
            .iter()
            .map(|&h| {
                let l = LstmLayer::zeros(width, h);
                width = h;
                l
            })
            .collect();
        LstmStack { layers }
    }

    pub fn zeros_like(&self) -> Self {
        LstmStack {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer::zeros(l.n_in, l.n_hidden))
                .collect(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map(|l| l.n_hidden).unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n_hidden).collect()
    }

    /// Run `steps` steps over `rows` sequences. `input` is
    /// `[step][row][n_in]`; `masks` holds one mask per layer (`None` is the
    /// identity); `init` defaults to zeros.
    pub fn forward(
        &self,
        input: &[F],
        steps: usize,
        rows: usize,
        masks: Option<&[DropoutMask<F>]>,
        init: Option<&LstmState<F>>,
        keep_cache: bool,
    ) -> StackOutput<F> {
        if let Some(m) = masks {
            assert_eq!(m.len(), self.layers.len(), "one dropout mask per layer");
        }
        let zero_state;
        let init = match init {
            Some(s) => {
                assert_eq!(s.rows, rows, "initial state rows");
                s
            }
            None => {
                zero_state = LstmState::zeros(self, rows);
                &zero_state
            }
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut state = LstmState {
            rows,
            h: Vec::new(),
            c: Vec::new(),
        };
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let h = layer.n_hidden;
            let cache = layer.forward_layer(&x, steps, rows, &init.h[k], &init.c[k]);
            let last = steps.saturating_sub(1) * rows * h;
            if steps > 0 {
                state.h.push(cache.h[last..last + rows * h].to_vec());
                state.c.push(cache.c[last..last + rows * h].to_vec());
            } else {
                state.h.push(init.h[k].clone());
                state.c.push(init.c[k].clone());
            }
            x = cache.h.clone();
            if let Some(m) = masks {
                apply_mask(&mut x, &m[k], steps, rows);
            }
            if keep_cache {
                caches.push(cache);
            }
        }
        StackOutput {
            output: x,
            state,
            cache: keep_cache.then(|| StackCache {
                steps,
                rows,
                layers: caches,
                masks: masks.map(|m| m.to_vec()),
            }),
        }
    }

    /// Accumulate parameter gradients into `grads` given the gradient of
    /// the masked stack output; returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &StackCache<F>,
        d_output: &[F],
        grads: &mut LstmStack<F>,
    ) -> Vec<F> {
        let (steps, rows) = (cache.steps, cache.rows);
        let mut d = d_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            if let Some(m) = &cache.masks {
                apply_mask(&mut d, &m[k], steps, rows);
            }
            d = self.layers[k].backward_layer(
                &cache.layers[k],
                steps,
                rows,
                &d,
                &mut grads.layers[k],
            );
        }
        d
    }

    /// Parameter blocks in a fixed order, named `<prefix>.<layer>.<w|u|b>`.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, char, &[F])> {
        self.layers.iter().enumerate().flat_map(|(k, l)| {
            [
                (k, 'w', l.w.as_slice()),
                (k, 'u', l.u.as_slice()),
                (k, 'b', l.b.as_slice()),
            ]
        })
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = (usize, char, &mut [F])> {
        self.layers.iter_mut().enumerate().flat_map(|(k, l)| {
            [
                (k, 'w', l.w.as_mut_slice()),
                (k, 'u', l.u.as_mut_slice()),
                (k, 'b', l.b.as_mut_slice()),
            ]
        })
    }
}

fn apply_mask<F: Scalar>(x: &mut [F], mask: &DropoutMask<F>, steps: usize, rows: usize) {
    assert_eq!(mask.rows, rows, "mask rows");
    let width = mask.width;
    assert_eq!(x.len(), steps * rows * width, "masked buffer size");
    for chunk in x.chunks_exact_mut(rows * width) {
        for (v, &m) in chunk.iter_mut().zip(&mask.values) {
            *v = *v * m;
        }
    }
}
