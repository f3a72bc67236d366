use super::VizError;

/// One-sided log-magnitude spectrum `log(1 + |X_k|)` for `k = 0..=N/2`,
/// computed by direct summation with a precomputed twiddle table.
pub fn spectrum(x: &[f64]) -> Result<Vec<f64>, VizError> {
    let n = x.len();
    if n < 2 {
        return Err(VizError::Invalid(format!(
            "spectrum needs at least 2 samples, got {n}"
        )));
    }
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| {
            let a = std::f64::consts::TAU * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    Ok((0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            let mut idx = 0;
            for &v in x {
                re += v * cos[idx];
                im -= v * sin[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            re.hypot(im).ln_1p()
        })
        .collect())
}

/// Frequency of bin `k` for an `n`-point transform.
pub fn bin_hz(k: usize, n: usize, sample_rate: u32) -> f64 {
    k as f64 * sample_rate as f64 / n as f64
}

/// Index of the first maximum.
pub fn peak_bin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stable ordering of rows by their peak bin.
pub fn sort_by_peak(rows: &[Vec<f64>]) -> Vec<usize> {
    let peaks: Vec<usize> = rows.iter().map(|r| peak_bin(r)).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| peaks[i]);
    order
}
