//! Third-order tensor kernels: n-mode vector products, CP reconstruction,
//! and the relation-conditioned transform `f(e_r, h) = W_c ×₁ h ×₂ e_r`.
//!
//! A core tensor is stored either dense or as CP factors
//! `W_c = [[W_1, W_2, W_3]]` with `W_1 ∈ ℝ^{n_b×d_r}`, `W_2 ∈ ℝ^{n_b×d_e}`,
//! `W_3 ∈ ℝ^{n_b×d_o}`. Factor-to-mode binding: `W_2` ↔ mode 1 (incoming
//! entity), `W_1` ↔ mode 2 (relation), `W_3` ↔ mode 3 (output). The CP path
//! never materializes the dense tensor outside of [`cp_reconstruct`].

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::real::Real;

/// Tensor mode for n-mode products, 1-based as customary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub fn axis(self) -> Axis {
        match self {
            Mode::One => Axis(0),
            Mode::Two => Axis(1),
            Mode::Three => Axis(2),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Mode::One => 1,
            Mode::Two => 2,
            Mode::Three => 3,
        }
    }
}

/// Contracts `t`'s given mode with the vector `v`; the surviving modes keep
/// their order. For mode 1: `out[j,k] = Σ_i t[i,j,k]·v[i]`.
pub fn n_mode_product<A: Real>(
    t: &ArrayView3<A>,
    v: &ArrayView1<A>,
    mode: Mode,
) -> Result<Array2<A>> {
    let axis = mode.axis();
    let len = t.len_of(axis);
    if v.len() != len {
        return Err(Error::shape(
            "n_mode_product",
            format!("vector of length {len} for mode {}", mode.index()),
            format!("length {}", v.len()),
        ));
    }
    let (d1, d2) = match mode {
        Mode::One => (t.len_of(Axis(1)), t.len_of(Axis(2))),
        Mode::Two => (t.len_of(Axis(0)), t.len_of(Axis(2))),
        Mode::Three => (t.len_of(Axis(0)), t.len_of(Axis(1))),
    };
    let mut out = Array2::<A>::zeros((d1, d2));
    for (i, slice) in t.axis_iter(axis).enumerate() {
        let w = v[i];
        if w != A::zero() {
            out.zip_mut_with(&slice, |o, &s| *o += w * s);
        }
    }
    Ok(out)
}

/// Relation-conditioning weight of one encoder layer, dense or CP-factored.
#[derive(Debug, Clone)]
pub enum CoreTensor<A> {
    /// `d_e × d_r × d_o` array.
    Dense(Array3<A>),
    /// Rank-`n_b` CP factors; see module docs for the mode binding.
    Cp {
        w1: Array2<A>,
        w2: Array2<A>,
        w3: Array2<A>,
    },
}

impl<A: Real> CoreTensor<A> {
    /// `(d_e, d_r, d_o)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            CoreTensor::Dense(t) => t.dim(),
            CoreTensor::Cp { w1, w2, w3 } => (w2.ncols(), w1.ncols(), w3.ncols()),
        }
    }

    /// CP rank (the number of bases), if factored.
    pub fn n_bases(&self) -> Option<usize> {
        match self {
            CoreTensor::Dense(_) => None,
            CoreTensor::Cp { w1, .. } => Some(w1.nrows()),
        }
    }

    /// Free parameters: `d_e·d_r·d_o` dense, `n_b·(d_e+d_r+d_o)` CP.
    pub fn param_count(&self) -> usize {
        match self {
            CoreTensor::Dense(t) => t.len(),
            CoreTensor::Cp { w1, w2, w3 } => w1.len() + w2.len() + w3.len(),
        }
    }

    pub fn is_cp(&self) -> bool {
        matches!(self, CoreTensor::Cp { .. })
    }
}

/// Expands CP factors into the dense tensor:
/// `dense[i,j,k] = Σ_b W2[b,i]·W1[b,j]·W3[b,k]`.
pub fn cp_reconstruct<A: Real>(core: &CoreTensor<A>) -> Result<CoreTensor<A>> {
    let CoreTensor::Cp { w1, w2, w3 } = core else {
        return Err(Error::State(
            "cp_reconstruct requires a CP-factored core".into(),
        ));
    };
    let (d_e, d_r, d_o) = core.dims();
    let n_b = w1.nrows();
    let mut dense = Array3::<A>::zeros((d_e, d_r, d_o));
    for b in 0..n_b {
        for i in 0..d_e {
            let hi = w2[(b, i)];
            if hi == A::zero() {
                continue;
            }
            for j in 0..d_r {
                let hij = hi * w1[(b, j)];
                for k in 0..d_o {
                    dense[(i, j, k)] += hij * w3[(b, k)];
                }
            }
        }
    }
    Ok(CoreTensor::Dense(dense))
}

/// Applies the relation-conditioned transform to an entity representation:
/// `out[k] = Σ_{i,j} W_c[i,j,k]·h[i]·e_r[j]`.
///
/// The CP path stays in factored form: `out = W3ᵀ·((W2·h) ⊙ (W1·e_r))`,
/// `O(n_b·(d_e+d_r+d_o))` instead of `O(d_e·d_r·d_o)`.
pub fn relation_transform<A: Real>(
    core: &CoreTensor<A>,
    h: &ArrayView1<A>,
    e_r: &ArrayView1<A>,
) -> Result<Array1<A>> {
    let (d_e, d_r, _) = core.dims();
    if h.len() != d_e {
        return Err(Error::shape(
            "relation_transform",
            format!("entity vector of length {d_e}"),
            format!("length {}", h.len()),
        ));
    }
    if e_r.len() != d_r {
        return Err(Error::shape(
            "relation_transform",
            format!("relation vector of length {d_r}"),
            format!("length {}", e_r.len()),
        ));
    }
    match core {
        CoreTensor::Dense(t) => {
            // (W_c ×₁ h) gives [j,k]; contract j with e_r.
            let jk = n_mode_product(&t.view(), h, Mode::One)?;
            Ok(jk.t().dot(e_r))
        }
        CoreTensor::Cp { w1, w2, w3 } => {
            let p = w2.dot(h);
            let q = w1.dot(e_r);
            let z = &p * &q;
            Ok(w3.t().dot(&z))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Triple-loop oracle for n-mode products, kept independent of the
    /// implementation above.
    fn n_mode_oracle(t: &Array3<f64>, v: &[f64], mode: Mode) -> Array2<f64> {
        let (a, b, c) = t.dim();
        match mode {
            Mode::One => {
                let mut out = Array2::zeros((b, c));
                for i in 0..a {
                    for j in 0..b {
                        for k in 0..c {
                            out[(j, k)] += t[(i, j, k)] * v[i];
                        }
                    }
                }
                out
            }
            Mode::Two => {
                let mut out = Array2::zeros((a, c));
                for i in 0..a {
                    for j in 0..b {
                        for k in 0..c {
                            out[(i, k)] += t[(i, j, k)] * v[j];
                        }
                    }
                }
                out
            }
            Mode::Three => {
                let mut out = Array2::zeros((a, b));
                for i in 0..a {
                    for j in 0..b {
                        for k in 0..c {
                            out[(i, j)] += t[(i, j, k)] * v[k];
                        }
                    }
                }
                out
            }
        }
    }

    fn random_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_vector_gives_zero_matrix() {
        let t = random_tensor(&mut ChaCha8Rng::seed_from_u64(1), (3, 4, 5));
        let v = Array1::<f64>::zeros(3);
        let out = n_mode_product(&t.view(), &v.view(), Mode::One).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn all_ones_mode1_example() {
        let t = Array3::<f64>::ones((2, 2, 2));
        let v = array![1.0, 2.0];
        let out = n_mode_product(&t.view(), &v.view(), Mode::One).unwrap();
        for &x in out.iter() {
            assert_abs_diff_eq!(x, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor(&mut rng, (3, 4, 5));
        for (mode, len) in [(Mode::One, 3), (Mode::Two, 4), (Mode::Three, 5)] {
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let va = Array1::from(v.clone());
            let got = n_mode_product(&t.view(), &va.view(), mode).unwrap();
            let want = n_mode_oracle(&t, &v, mode);
            for (g, w) in got.iter().zip(want.iter()) {
                assert_abs_diff_eq!(g, w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mode_products_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, (3, 4, 5));
        let u = Array1::from((0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let v = Array1::from((0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        // ×₁ then ×₂: after mode-1 the former mode 2 is axis 0 of the matrix.
        let m1 = n_mode_product(&t.view(), &u.view(), Mode::One).unwrap();
        let r1 = u_then_v(&m1, &v);
        let m2 = n_mode_product(&t.view(), &v.view(), Mode::Two).unwrap();
        let r2 = m2.t().dot(&u);
        for (a, b) in r1.iter().zip(r2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }

        fn u_then_v(jk: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
            jk.t().dot(v)
        }
    }

    #[test]
    fn mismatched_vector_is_shape_error() {
        let t = Array3::<f64>::zeros((2, 3, 4));
        let v = Array1::<f64>::zeros(5);
        let err = n_mode_product(&t.view(), &v.view(), Mode::Two).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mode 2"), "{msg}");
        assert!(msg.contains('3') && msg.contains('5'), "{msg}");
    }

    #[test]
    fn cp_reconstruct_rank_one() {
        let core = CoreTensor::Cp {
            w1: array![[1.0, 2.0]],
            w2: array![[3.0, 4.0]],
            w3: array![[5.0, 6.0]],
        };
        let CoreTensor::Dense(dense) = cp_reconstruct(&core).unwrap() else {
            panic!("expected dense result");
        };
        assert_abs_diff_eq!(dense[(0, 0, 0)], 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dense[(1, 1, 1)], 48.0, epsilon = 1e-12);
        // Spot-check a mixed index: w2[0,1]*w1[0,0]*w3[0,1] = 4*1*6.
        assert_abs_diff_eq!(dense[(1, 0, 1)], 24.0, epsilon = 1e-12);
    }

    #[test]
    fn cp_reconstruct_zero_factors() {
        let core = CoreTensor::Cp {
            w1: Array2::<f64>::zeros((2, 3)),
            w2: Array2::<f64>::zeros((2, 3)),
            w3: Array2::<f64>::zeros((2, 3)),
        };
        let CoreTensor::Dense(dense) = cp_reconstruct(&core).unwrap() else {
            panic!("expected dense result");
        };
        assert!(dense.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cp_reconstruct_rejects_dense_input() {
        let core = CoreTensor::Dense(Array3::<f64>::zeros((2, 2, 2)));
        assert!(cp_reconstruct(&core).is_err());
    }

    fn random_cp(rng: &mut ChaCha8Rng, n_b: usize, dims: (usize, usize, usize)) -> CoreTensor<f64> {
        let (d_e, d_r, d_o) = dims;
        CoreTensor::Cp {
            w1: Array2::from_shape_fn((n_b, d_r), |_| rng.random_range(-1.0..1.0)),
            w2: Array2::from_shape_fn((n_b, d_e), |_| rng.random_range(-1.0..1.0)),
            w3: Array2::from_shape_fn((n_b, d_o), |_| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn cp_and_dense_contraction_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let core = random_cp(&mut rng, 4, (3, 3, 3));
        let dense = cp_reconstruct(&core).unwrap();
        let h = Array1::from((0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let e = Array1::from((0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let via_cp = relation_transform(&core, &h.view(), &e.view()).unwrap();
        let via_dense = relation_transform(&dense, &h.view(), &e.view()).unwrap();
        for (a, b) in via_cp.iter().zip(via_dense.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn transform_zero_entity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let core = CoreTensor::Dense(random_tensor(&mut rng, (3, 4, 5)));
        let h = Array1::<f64>::zeros(3);
        let e = Array1::from((0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let out = relation_transform(&core, &h.view(), &e.view()).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transform_single_entry_expansion() {
        let mut t = Array3::<f64>::zeros((2, 2, 2));
        t[(0, 0, 0)] = 1.0;
        let core = CoreTensor::Dense(t);
        let h = array![2.0, 0.0];
        let e = array![3.0, 0.0];
        let out = relation_transform(&core, &h.view(), &e.view()).unwrap();
        assert_abs_diff_eq!(out[0], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_cp_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let core = random_cp(&mut rng, 3, (4, 5, 4));
            let dense = cp_reconstruct(&core).unwrap();
            let h = Array1::from((0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            let e = Array1::from((0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            let a = relation_transform(&core, &h.view(), &e.view()).unwrap();
            let b = relation_transform(&dense, &h.view(), &e.view()).unwrap();
            let denom = b.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1e-12);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() / denom < 1e-8);
            }
        }
    }

    #[test]
    fn multilinearity_in_both_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let core = random_cp(&mut rng, 3, (3, 3, 3));
        let h = Array1::from((0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let e = Array1::from((0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let alpha = 2.5;
        let base = relation_transform(&core, &h.view(), &e.view()).unwrap();
        let scaled_h = relation_transform(&core, &(&h * alpha).view(), &e.view()).unwrap();
        let scaled_e = relation_transform(&core, &h.view(), &(&e * alpha).view()).unwrap();
        for ((b, sh), se) in base.iter().zip(scaled_h.iter()).zip(scaled_e.iter()) {
            assert!((sh - alpha * b).abs() < 1e-10);
            assert!((se - alpha * b).abs() < 1e-10);
        }
    }

    #[test]
    fn frontal_slice_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let core = random_cp(&mut rng, 3, (5, 4, 5));
        let CoreTensor::Cp { w1, w2, w3 } = core.clone() else {
            unreachable!()
        };
        let CoreTensor::Dense(dense) = cp_reconstruct(&core).unwrap() else {
            unreachable!()
        };
        let (_, _, d_o) = core.dims();
        for k in 0..d_o {
            let diag = Array2::from_diag(&w3.column(k));
            let slice_k = w2.t().dot(&diag).dot(&w1);
            for i in 0..slice_k.nrows() {
                for j in 0..slice_k.ncols() {
                    assert!((slice_k[(i, j)] - dense[(i, j, k)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn param_count_formulas() {
        let dense = CoreTensor::Dense(Array3::<f64>::zeros((3, 4, 5)));
        assert_eq!(dense.param_count(), 60);
        let cp = CoreTensor::Cp {
            w1: Array2::<f64>::zeros((7, 4)),
            w2: Array2::<f64>::zeros((7, 3)),
            w3: Array2::<f64>::zeros((7, 5)),
        };
        assert_eq!(cp.param_count(), 7 * (3 + 4 + 5));
    }
}
