/// Gaussian kernel smoothing with half-sample reflection at the boundaries
/// (`d c b a | a b c d | d c b a`) and the kernel truncated at 4 sd.
/// A bandwidth of zero returns the series unchanged.
pub fn smooth_gaussian(series: &[f64], bandwidth: f64) -> Vec<f64> {
    if bandwidth <= 0.0 || series.is_empty() {
        return series.to_vec();
    }
    let radius = (4.0 * bandwidth + 0.5) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / bandwidth).powi(2)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let n = series.len() as isize;
    let reflect = |mut i: isize| {
        let period = 2 * n;
        i = i.rem_euclid(period);
        if i >= n {
            period - 1 - i
        } else {
            i
        }
    };
    (0..n)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * series[reflect(t + j as isize - radius) as usize])
                .sum()
        })
        .collect()
}
