//! The five array kernels the solver is built from, each with a scalar
//! reference path and a vectorized path.
//!
//! Both paths implement identical mathematical contracts. The elementwise
//! kernels (`daxpy`, `dscal`, `ddaxpy`) evaluate the same expression per
//! element on either path, so their outputs match bitwise. `dprod` may
//! reassociate on the vectorized path: it keeps [`LANES`] lane-parallel
//! partial sums and combines them in fixed lane order, which makes the
//! result deterministic run-to-run and keeps the scalar/vectorized
//! difference within [`DPROD_REL_TOL`] relative to the sum of |x_i * y_i|.
//!
//! Kernels are pure functions over their inputs and safe to call from any
//! worker on disjoint data. Length mismatches are program faults and panic.

/// Which code path a kernel executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelPath {
    /// Straightforward sequential loop; the correctness baseline.
    ScalarReference,
    /// Lane-chunked loop written so the compiler can keep SIMD units busy.
    Vectorized,
}

/// Lane count of the vectorized path (one 256-bit register of f64).
pub const LANES: usize = 4;

/// Relative bound on scalar-vs-vectorized disagreement of `dprod`,
/// scaled by the sum of |x_i * y_i|.
pub const DPROD_REL_TOL: f64 = 1e-13;

/// Dot product: sum of `x[i] * y[i]`.
pub fn dprod(path: KernelPath, x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "dprod: length mismatch {} vs {}", x.len(), y.len());
    match path {
        KernelPath::ScalarReference => {
            let mut acc = 0.0;
            for (a, b) in x.iter().zip(y) {
                acc += a * b;
            }
            acc
        }
        KernelPath::Vectorized => {
            let mut acc = [0.0f64; LANES];
            let xc = x.chunks_exact(LANES);
            let yc = y.chunks_exact(LANES);
            let xr = xc.remainder();
            let yr = yc.remainder();
            for (xs, ys) in xc.zip(yc) {
                for l in 0..LANES {
                    acc[l] += xs[l] * ys[l];
                }
            }
            // Fixed lane order keeps the reassociated sum deterministic.
            let mut total = ((acc[0] + acc[1]) + acc[2]) + acc[3];
            for (a, b) in xr.iter().zip(yr) {
                total += a * b;
            }
            total
        }
    }
}

/// `out[i] = a * x[i] + y[i]`, elementwise exact on both paths.
pub fn daxpy(path: KernelPath, a: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "daxpy: length mismatch {} vs {}", x.len(), y.len());
    assert_eq!(x.len(), out.len(), "daxpy: output length mismatch");
    match path {
        KernelPath::ScalarReference => {
            for i in 0..x.len() {
                out[i] = a * x[i] + y[i];
            }
        }
        KernelPath::Vectorized => {
            let n = x.len() - x.len() % LANES;
            let (xm, xr) = x.split_at(n);
            let (ym, yr) = y.split_at(n);
            let (om, or) = out.split_at_mut(n);
            for ((xs, ys), os) in xm
                .chunks_exact(LANES)
                .zip(ym.chunks_exact(LANES))
                .zip(om.chunks_exact_mut(LANES))
            {
                for l in 0..LANES {
                    os[l] = a * xs[l] + ys[l];
                }
            }
            for i in 0..xr.len() {
                or[i] = a * xr[i] + yr[i];
            }
        }
    }
}

/// `out[i] = c[i] - d * y[i]`, elementwise exact on both paths.
pub fn dscal(path: KernelPath, c: &[f64], d: f64, y: &[f64], out: &mut [f64]) {
    assert_eq!(c.len(), y.len(), "dscal: length mismatch {} vs {}", c.len(), y.len());
    assert_eq!(c.len(), out.len(), "dscal: output length mismatch");
    match path {
        KernelPath::ScalarReference => {
            for i in 0..c.len() {
                out[i] = c[i] - d * y[i];
            }
        }
        KernelPath::Vectorized => {
            let n = c.len() - c.len() % LANES;
            let (cm, cr) = c.split_at(n);
            let (ym, yr) = y.split_at(n);
            let (om, or) = out.split_at_mut(n);
            for ((cs, ys), os) in cm
                .chunks_exact(LANES)
                .zip(ym.chunks_exact(LANES))
                .zip(om.chunks_exact_mut(LANES))
            {
                for l in 0..LANES {
                    os[l] = cs[l] - d * ys[l];
                }
            }
            for i in 0..cr.len() {
                or[i] = cr[i] - d * yr[i];
            }
        }
    }
}

/// `out[i] = a * x[i] + b * y[i] + z[i]`, elementwise exact on both paths.
pub fn ddaxpy(path: KernelPath, a: f64, x: &[f64], b: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "ddaxpy: length mismatch {} vs {}", x.len(), y.len());
    assert_eq!(x.len(), z.len(), "ddaxpy: length mismatch {} vs {}", x.len(), z.len());
    assert_eq!(x.len(), out.len(), "ddaxpy: output length mismatch");
    match path {
        KernelPath::ScalarReference => {
            for i in 0..x.len() {
                out[i] = a * x[i] + b * y[i] + z[i];
            }
        }
        KernelPath::Vectorized => {
            let n = x.len() - x.len() % LANES;
            let (xm, xr) = x.split_at(n);
            let (ym, yr) = y.split_at(n);
            let (zm, zr) = z.split_at(n);
            let (om, or) = out.split_at_mut(n);
            for (((xs, ys), zs), os) in xm
                .chunks_exact(LANES)
                .zip(ym.chunks_exact(LANES))
                .zip(zm.chunks_exact(LANES))
                .zip(om.chunks_exact_mut(LANES))
            {
                for l in 0..LANES {
                    os[l] = a * xs[l] + b * ys[l] + zs[l];
                }
            }
            for i in 0..xr.len() {
                or[i] = a * xr[i] + b * yr[i] + zr[i];
            }
        }
    }
}

/// Dot products of several pairs at once. Semantically equal to mapping
/// [`dprod`] over the pairs (same summation order per pair); in parallel
/// solves all results travel in a single global reduction event.
pub fn ganged_dprod(path: KernelPath, pairs: &[(&[f64], &[f64])]) -> Vec<f64> {
    pairs.iter().map(|(x, y)| dprod(path, x, y)).collect()
}
