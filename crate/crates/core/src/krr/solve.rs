//! Symmetric positive-definite solves for `(K + λE) W = Y`.

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::cholesky::llt;
use faer::{Conj, Mat, Parallelism};

use crate::error::{Error, Result};

/// Relative pivot floor below which a successful factorization is still
/// treated as numerically singular.
fn pivot_floor(n: usize, max_diag: f64) -> f64 {
    n as f64 * f64::EPSILON * max_diag
}

/// Solves `A W = Y` for symmetric positive-definite `A`, with one step of
/// iterative refinement.
///
/// `fill` writes the upper triangle (including the diagonal) of `A` into a
/// zeroed `n × n` matrix. `rhs` is `n × m`.
pub fn solve_spd(n: usize, fill: impl Fn(&mut Mat<f64>), rhs: &Mat<f64>) -> Result<Mat<f64>> {
    assert_eq!(rhs.nrows(), n);
    let mut a = Mat::<f64>::zeros(n, n);
    fill(&mut a);
    let upper = Packed::from_upper(&a);
    for j in 0..n {
        for i in 0..j {
            let v = a.read(i, j);
            a.write(j, i, v);
        }
    }

    let par = Parallelism::None;
    let params = Default::default();
    let req = llt::compute::cholesky_in_place_req::<f64>(n, par, params).expect("stack size");
    let mut buf = GlobalPodBuffer::new(req);
    let factored = llt::compute::cholesky_in_place(
        a.as_mut(),
        Default::default(),
        par,
        PodStack::new(&mut buf),
        params,
    );
    if let Err(e) = factored {
        let index = e.non_positive_definite_minor;
        return Err(Error::Conditioning {
            pivot: failing_pivot(&upper, index),
            index,
        });
    }

    let max_diag = (0..n).map(|i| upper.get(i, i)).fold(0.0, f64::max);
    let (index, min_l) = (0..n)
        .map(|i| (i, a.read(i, i)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap_or((0, 1.0));
    let pivot = min_l * min_l;
    if !(pivot > pivot_floor(n, max_diag)) {
        return Err(Error::Conditioning { pivot, index });
    }

    let solve = |b: &mut Mat<f64>| {
        let req = llt::solve::solve_in_place_req::<f64>(n, b.ncols(), par).expect("stack size");
        let mut buf = GlobalPodBuffer::new(req);
        llt::solve::solve_in_place_with_conj(
            a.as_ref(),
            Conj::No,
            b.as_mut(),
            par,
            PodStack::new(&mut buf),
        );
    };

    let mut w = rhs.clone();
    solve(&mut w);
    let mut r = residual(&upper, &w, rhs);
    solve(&mut r);
    for j in 0..w.ncols() {
        for i in 0..n {
            w.write(i, j, w.read(i, j) + r.read(i, j));
        }
    }
    Ok(w)
}

/// Column-packed upper triangle of a symmetric matrix.
struct Packed {
    n: usize,
    data: Vec<f64>,
}

impl Packed {
    fn from_upper(a: &Mat<f64>) -> Self {
        let n = a.nrows();
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            data.extend((0..=j).map(|i| a.read(i, j)));
        }
        Packed { n, data }
    }

    fn column(&self, j: usize) -> &[f64] {
        let start = j * (j + 1) / 2;
        &self.data[start..start + j + 1]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.column(j)[i]
    }
}

/// `Y - A W`.
fn residual(a: &Packed, w: &Mat<f64>, y: &Mat<f64>) -> Mat<f64> {
    let n = a.n;
    let m = w.ncols();
    let mut r = Mat::<f64>::zeros(n, m);
    for c in 0..m {
        let wc: Vec<f64> = (0..n).map(|i| w.read(i, c)).collect();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let col = a.column(j);
            let wj = wc[j];
            let mut acc = col[j] * wj;
            for i in 0..j {
                acc += col[i] * wc[i];
                out[i] += col[i] * wj;
            }
            out[j] += acc;
        }
        for (i, o) in out.into_iter().enumerate() {
            r.write(i, c, y.read(i, c) - o);
        }
    }
    r
}

/// Pivot at `index` of an unblocked LDLᵀ of the leading `index + 1` block.
fn failing_pivot(a: &Packed, index: usize) -> f64 {
    let k = index + 1;
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            m[i * k + j] = a.get(i, j);
        }
    }
    for p in 0..index {
        let d = m[p * k + p];
        if d == 0.0 {
            return 0.0;
        }
        for i in p + 1..k {
            let f = m[i * k + p] / d;
            for j in p + 1..k {
                m[i * k + j] -= f * m[p * k + j];
            }
        }
    }
    m[index * k + index]
}
