//! LSTM cell with a word input `u`, a visual input `z`, and exact backward pass.
//!
//! ```text
//! i = σ(W_xi u + W_hi h' + W_zi z + b_i)
//! f = σ(W_xf u + W_hf h' + W_zf z + b_f)
//! o = σ(W_xo u + W_ho h' + W_zo z + b_o)
//! g = φ(W_xg u + W_hg h' + W_zg z + b_g)
//! c = f ⊙ c' + i ⊙ g
//! h = o ⊙ φ(c)
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::{sigmoid, Matrix, Real};

/// Gate order used by every per-gate array.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];
const I: usize = 0;
const F: usize = 1;
const O: usize = 2;
const G: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// Word-input weights, hidden × input.
    pub w_x: [Matrix<T>; 4],
    /// Recurrent weights, hidden × hidden.
    pub w_h: [Matrix<T>; 4],
    /// Visual-input weights, hidden × visual. May have zero columns.
    pub w_z: [Matrix<T>; 4],
    pub b: [Vec<T>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// Activations retained by [`lstm_step`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    pub u: Vec<T>,
    pub z: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Post-activation gate values in [`GATES`] order.
    pub gates: [Vec<T>; 4],
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
}

/// Gradients flowing out of one step towards its inputs.
#[derive(Clone, Debug)]
pub struct LstmInputGrads<T> {
    pub u: Vec<T>,
    pub z: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(input: usize, hidden: usize, visual: usize) -> Self {
        Self {
            w_x: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            w_h: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            w_z: std::array::from_fn(|_| Matrix::zeros(hidden, visual)),
            b: std::array::from_fn(|_| vec![T::zero(); hidden]),
        }
    }

    /// Uniform(−range, range) weights and zero biases, except the forget
    /// gate bias which is set to `forget_bias`.
    pub fn init(
        input: usize,
        hidden: usize,
        visual: usize,
        range: f64,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(input, hidden, visual);
        let mut draw = |m: &mut Matrix<T>| {
            for v in m.data_mut() {
                *v = T::lit(rng.random_range(-range..=range));
            }
        };
        for g in 0..4 {
            draw(&mut p.w_x[g]);
            draw(&mut p.w_h[g]);
            draw(&mut p.w_z[g]);
        }
        p.b[F].iter_mut().for_each(|v| *v = T::lit(forget_bias));
        p
    }

    pub fn hidden(&self) -> usize {
        self.b[0].len()
    }

    pub fn input(&self) -> usize {
        self.w_x[0].cols()
    }

    pub fn visual(&self) -> usize {
        self.w_z[0].cols()
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            w_x: std::array::from_fn(|g| self.w_x[g].cast()),
            w_h: std::array::from_fn(|g| self.w_h[g].cast()),
            w_z: std::array::from_fn(|g| self.w_z[g].cast()),
            b: std::array::from_fn(|g| self.b[g].iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    fn check_dims(&self, u: usize, z: usize, h: usize, c: usize) -> Result<()> {
        let hid = self.hidden();
        if u != self.input() || z != self.visual() || h != hid || c != hid {
            return Err(Error::shape(
                "lstm_step",
                format!(
                    "params expect u={}, z={}, h=c={}; got u={u}, z={z}, h={h}, c={c}",
                    self.input(),
                    self.visual(),
                    hid
                ),
            ));
        }
        Ok(())
    }
}

impl<T: Real> Parameters<T> for LstmParams<T> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (g, gate) in GATES.iter().enumerate() {
            f(&join(prefix, &format!("w_x{gate}")), self.w_x[g].data());
            f(&join(prefix, &format!("w_h{gate}")), self.w_h[g].data());
            f(&join(prefix, &format!("w_z{gate}")), self.w_z[g].data());
            f(&join(prefix, &format!("b_{gate}")), &self.b[g]);
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (g, gate) in GATES.iter().enumerate() {
            f(&join(prefix, &format!("w_x{gate}")), self.w_x[g].data_mut());
            f(&join(prefix, &format!("w_h{gate}")), self.w_h[g].data_mut());
            f(&join(prefix, &format!("w_z{gate}")), self.w_z[g].data_mut());
            f(&join(prefix, &format!("b_{gate}")), &mut self.b[g]);
        }
    }
}

pub fn lstm_step<T: Real>(
    params: &LstmParams<T>,
    u: &[T],
    z: &[T],
    prev: &LstmState<T>,
) -> Result<(LstmState<T>, LstmCache<T>)> {
    params.check_dims(u.len(), z.len(), prev.h.len(), prev.c.len())?;
    let gates: [Vec<T>; 4] = std::array::from_fn(|g| {
        let mut a = params.b[g].clone();
        params.w_x[g].matvec_acc(u, &mut a);
        params.w_h[g].matvec_acc(&prev.h, &mut a);
        params.w_z[g].matvec_acc(z, &mut a);
        if g == G {
            a.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            a.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        a
    });
    let hidden = params.hidden();
    let mut c = Vec::with_capacity(hidden);
    let mut tanh_c = Vec::with_capacity(hidden);
    let mut h = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let ck = gates[F][k] * prev.c[k] + gates[I][k] * gates[G][k];
        let tk = ck.tanh();
        c.push(ck);
        tanh_c.push(tk);
        h.push(gates[O][k] * tk);
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("lstm cell state became non-finite"));
    }
    let cache = LstmCache {
        u: u.to_vec(),
        z: z.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        gates,
        c: c.clone(),
        tanh_c,
    };
    Ok((LstmState { h, c }, cache))
}

/// Backpropagates `grad_h`/`grad_c` (gradients w.r.t. this step's outputs)
/// through one step, accumulating parameter gradients into `grads`.
pub fn lstm_step_backward<T: Real>(
    params: &LstmParams<T>,
    cache: &LstmCache<T>,
    grad_h: &[T],
    grad_c: &[T],
    grads: &mut LstmParams<T>,
) -> Result<LstmInputGrads<T>> {
    let hidden = params.hidden();
    params
        .check_dims(
            cache.u.len(),
            cache.z.len(),
            cache.h_prev.len(),
            cache.c_prev.len(),
        )
        .map_err(|_| Error::invalid("lstm cache does not belong to these parameters"))?;
    if cache.c.len() != hidden || cache.gates.iter().any(|g| g.len() != hidden) {
        return Err(Error::invalid("incomplete lstm cache"));
    }
    if grad_h.len() != hidden || grad_c.len() != hidden {
        return Err(Error::shape(
            "lstm_step_backward",
            format!("upstream gradients must have length {hidden}"),
        ));
    }
    if grads.hidden() != hidden
        || grads.input() != params.input()
        || grads.visual() != params.visual()
    {
        return Err(Error::shape(
            "lstm_step_backward",
            "gradient buffer shape differs",
        ));
    }

    let one = T::one();
    let [gi, gf, go, gg] = &cache.gates;
    let mut pre: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); hidden]);
    let mut c_prev = vec![T::zero(); hidden];
    for k in 0..hidden {
        let t = cache.tanh_c[k];
        let d_o = grad_h[k] * t;
        let dc = grad_c[k] + grad_h[k] * go[k] * (one - t * t);
        let d_f = dc * cache.c_prev[k];
        let d_i = dc * gg[k];
        let d_g = dc * gi[k];
        c_prev[k] = dc * gf[k];
        pre[I][k] = d_i * gi[k] * (one - gi[k]);
        pre[F][k] = d_f * gf[k] * (one - gf[k]);
        pre[O][k] = d_o * go[k] * (one - go[k]);
        pre[G][k] = d_g * (one - gg[k] * gg[k]);
    }

    let mut du = vec![T::zero(); cache.u.len()];
    let mut dz = vec![T::zero(); cache.z.len()];
    let mut dh = vec![T::zero(); hidden];
    for g in 0..4 {
        let a = &pre[g];
        grads.w_x[g].outer_acc(a, &cache.u);
        grads.w_h[g].outer_acc(a, &cache.h_prev);
        grads.w_z[g].outer_acc(a, &cache.z);
        for (b, &d) in grads.b[g].iter_mut().zip(a) {
            *b = *b + d;
        }
        params.w_x[g].tmatvec_acc(a, &mut du);
        params.w_h[g].tmatvec_acc(a, &mut dh);
        params.w_z[g].tmatvec_acc(a, &mut dz);
    }
    Ok(LstmInputGrads {
        u: du,
        z: dz,
        h_prev: dh,
        c_prev,
    })
}
