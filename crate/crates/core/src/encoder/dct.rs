//! Orthonormal 8x8 DCT-II used by the reference coarse codec.

pub const BLOCK: usize = 8;

/// Orthonormal DCT-II basis matrix: `basis[k][n]` is the k-th basis function
/// sampled at n. `B . x` transforms a column, `B^T . X` inverts it.
fn basis() -> [[f64; BLOCK]; BLOCK] {
    let mut b = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (k, row) in b.iter_mut().enumerate() {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos();
        }
    }
    b
}

/// Forward 2D DCT of one 8x8 block (row-major).
pub fn forward(block: &[f64; BLOCK * BLOCK]) -> [f64; BLOCK * BLOCK] {
    let b = basis();
    let mut tmp = [0.0; BLOCK * BLOCK];
    // rows
    for y in 0..BLOCK {
        for k in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                acc += b[k][x] * block[y * BLOCK + x];
            }
            tmp[y * BLOCK + k] = acc;
        }
    }
    // columns
    let mut out = [0.0; BLOCK * BLOCK];
    for k in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for y in 0..BLOCK {
                acc += b[k][y] * tmp[y * BLOCK + x];
            }
            out[k * BLOCK + x] = acc;
        }
    }
    out
}

/// Inverse 2D DCT of one 8x8 coefficient block.
pub fn inverse(coeffs: &[f64; BLOCK * BLOCK]) -> [f64; BLOCK * BLOCK] {
    let b = basis();
    let mut tmp = [0.0; BLOCK * BLOCK];
    for k in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for j in 0..BLOCK {
                acc += b[j][k] * coeffs[j * BLOCK + x];
            }
            tmp[k * BLOCK + x] = acc;
        }
    }
    let mut out = [0.0; BLOCK * BLOCK];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for j in 0..BLOCK {
                acc += b[j][x] * tmp[y * BLOCK + j];
            }
            out[y * BLOCK + x] = acc;
        }
    }
    out
}

/// Zigzag scan order over the 8x8 coefficient grid, DC first.
pub fn zigzag_order() -> [usize; BLOCK * BLOCK] {
    let mut order = [0usize; BLOCK * BLOCK];
    let mut idx = 0;
    for s in 0..(2 * BLOCK - 1) {
        let range: Vec<usize> = (0..=s.min(BLOCK - 1)).collect();
        let diag: Vec<(usize, usize)> = range
            .iter()
            .filter_map(|&i| {
                let j = s - i;
                (j < BLOCK).then_some((i, j))
            })
            .collect();
        let upward = s % 2 == 0;
        for &(i, j) in diag.iter() {
            let (y, x) = if upward { (j, i) } else { (i, j) };
            order[idx] = y * BLOCK + x;
            idx += 1;
        }
    }
    order
}
