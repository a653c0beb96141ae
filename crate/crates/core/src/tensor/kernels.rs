//! Row-major matrix kernels. Output rows may be split across threads; every
//! output element is reduced in the same order regardless of the thread count,
//! so results are bitwise identical for any setting.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::Scalar;

static THREADS: AtomicUsize = AtomicUsize::new(1);

// Below this many multiply-adds a kernel stays on the calling thread.
const PARALLEL_WORK: usize = 1 << 18;

pub fn set_kernel_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn kernel_threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

fn for_row_chunks<T: Scalar, F>(c: &mut [T], rows: usize, cols: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync,
{
    let threads = kernel_threads().min(rows);
    if threads <= 1 || work < PARALLEL_WORK || cols == 0 {
        f(0, c);
        return;
    }
    let per = rows.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, chunk) in c.chunks_mut(per * cols).enumerate() {
            let f = &f;
            s.spawn(move || f(t * per, chunk));
        }
    });
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for_row_chunks(c, m, n, m * k * n, |row0, chunk| {
        let rows = chunk.len() / n.max(1);
        let mut r = 0;
        // four output rows share each load of a `b` row
        while r + 4 <= rows {
            let (c0, rest) = chunk[r * n..(r + 4) * n].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            let ar = |i: usize| &a[(row0 + r + i) * k..(row0 + r + i + 1) * k];
            let (a0, a1, a2, a3) = (ar(0), ar(1), ar(2), ar(3));
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
                let rows4 = c0.iter_mut().zip(c1.iter_mut()).zip(c2.iter_mut().zip(c3.iter_mut()));
                for (((y0, y1), (y2, y3)), &bv) in rows4.zip(brow) {
                    *y0 += x0 * bv;
                    *y1 += x1 * bv;
                    *y2 += x2 * bv;
                    *y3 += x3 * bv;
                }
            }
            r += 4;
        }
        for r in r..rows {
            let crow = &mut chunk[r * n..(r + 1) * n];
            let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    });
}

/// `c[m,n] += a[m,k] * b[n,k]^T`, through a transposed copy of `b` so the
/// inner loop runs along contiguous output rows.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, c, m, k, n);
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for_row_chunks(c, m, n, m * k * n, |row0, chunk| {
        let rows = chunk.len() / n.max(1);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for r in 0..rows {
                let av = a[p * m + row0 + r];
                if av == T::zero() {
                    continue;
                }
                let crow = &mut chunk[r * n..(r + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    });
}
