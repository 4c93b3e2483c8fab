//! Small dense matrix products with "indirect" B operands: row `k` of B is
//! the slice of `b` starting at `b_rows[k]`. This lets convolutions read
//! kernel taps straight out of a padded input instead of an unfolded copy.

const MR: usize = 8;
const NR: usize = 16;

#[inline(always)]
fn fma(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// Copies rows `m0..m0+MR` of row-major `a` (m x kk) into a k-major panel,
/// zero-filling rows past `m`.
fn pack_a(a: &[f64], m: usize, kk: usize, m0: usize, panel: &mut [f64]) {
    for k in 0..kk {
        for r in 0..MR {
            panel[k * MR + r] = if m0 + r < m { a[(m0 + r) * kk + k] } else { 0.0 };
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile<const NB: usize>(
    panel: &[f64],
    b: &[f64],
    b_rows: &[usize],
    j0: usize,
    c: &mut [f64],
    ldc: usize,
    m0: usize,
    rows: usize,
) {
    let mut acc = [[0.0; NB]; MR];
    for (k, &off) in b_rows.iter().enumerate() {
        let bk: &[f64; NB] = b[off + j0..][..NB].try_into().expect("NB wide");
        let ak: &[f64; MR] = panel[k * MR..][..MR].try_into().expect("MR tall");
        for r in 0..MR {
            for j in 0..NB {
                acc[r][j] = fma(ak[r], bk[j], acc[r][j]);
            }
        }
    }
    for (r, row) in acc.iter().enumerate().take(rows) {
        let dst = &mut c[(m0 + r) * ldc + j0..][..NB];
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

/// `c[i][j] += sum_k a[i][k] * b[b_rows[k] + j]` for `i < m`, `j < n`, with
/// `a` row-major (m x b_rows.len()) and `c` rows `ldc` apart.
pub(crate) fn gemm_nn(a: &[f64], m: usize, b: &[f64], b_rows: &[usize], n: usize, c: &mut [f64], ldc: usize) {
    let kk = b_rows.len();
    debug_assert!(a.len() >= m * kk);
    let mut panel = vec![0.0; kk * MR];
    for m0 in (0..m).step_by(MR) {
        pack_a(a, m, kk, m0, &mut panel);
        let rows = MR.min(m - m0);
        let mut j0 = 0;
        while j0 + NR <= n {
            tile::<NR>(&panel, b, b_rows, j0, c, ldc, m0, rows);
            j0 += NR;
        }
        while j0 + 8 <= n {
            tile::<8>(&panel, b, b_rows, j0, c, ldc, m0, rows);
            j0 += 8;
        }
        while j0 < n {
            tile::<1>(&panel, b, b_rows, j0, c, ldc, m0, rows);
            j0 += 1;
        }
    }
}

const DB: usize = 4;
const LANES: usize = 8;

/// `out[i][q] += sum_j a[a_rows[i] + j] * b[b_rows[q] + j]` over `j < n`;
/// `out` is row-major (a_rows.len() x b_rows.len()).
pub(crate) fn gemm_nt(a: &[f64], a_rows: &[usize], b: &[f64], b_rows: &[usize], n: usize, out: &mut [f64]) {
    let (m, q) = (a_rows.len(), b_rows.len());
    let chunks = n / LANES;
    for i0 in (0..m).step_by(DB) {
        // Missing rows in a partial block repeat the first row; their sums are dropped.
        let ar: [usize; DB] = std::array::from_fn(|r| a_rows[if i0 + r < m { i0 + r } else { i0 }]);
        for q0 in (0..q).step_by(DB) {
            let br: [usize; DB] = std::array::from_fn(|r| b_rows[if q0 + r < q { q0 + r } else { q0 }]);
            let arows: [&[f64]; DB] = ar.map(|o| &a[o..o + n]);
            let brows: [&[f64]; DB] = br.map(|o| &b[o..o + n]);
            let mut acc = [[[0.0; LANES]; DB]; DB];
            for ch in 0..chunks {
                let j = ch * LANES;
                let av: [[f64; LANES]; DB] = arows.map(|r| r[j..j + LANES].try_into().expect("lanes"));
                let bv: [[f64; LANES]; DB] = brows.map(|r| r[j..j + LANES].try_into().expect("lanes"));
                for x in 0..DB {
                    for y in 0..DB {
                        for l in 0..LANES {
                            acc[x][y][l] = fma(av[x][l], bv[y][l], acc[x][y][l]);
                        }
                    }
                }
            }
            for x in 0..DB.min(m - i0) {
                for y in 0..DB.min(q - q0) {
                    let mut s: f64 = acc[x][y].iter().sum();
                    for j in chunks * LANES..n {
                        s = fma(a[ar[x] + j], b[br[y] + j], s);
                    }
                    out[(i0 + x) * q + q0 + y] += s;
                }
            }
        }
    }
}
