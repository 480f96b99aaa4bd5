use std::f64::consts::PI;

use super::SignalError;

/// Order of the low-pass prototype applied in each direction.
pub const FILTER_ORDER: usize = 4;
/// Odd-reflection padding on each side: three times the filter length.
pub const PAD_LEN: usize = 3 * (FILTER_ORDER + 1);

/// One second-order section, normalized so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II state that holds the output steady for a
    /// constant input equal to `level`.
    fn steady_state(&self, level: f64) -> [f64; 2] {
        let g = self.dc_gain() * level;
        [g - self.b[0] * level, self.b[2] * level - self.a[1] * g]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Fourth-order Butterworth low-pass as two cascaded sections, designed by
/// the bilinear transform with prewarped cutoff.
pub fn butterworth_lowpass(fs: f64, fc: f64) -> Result<[Biquad; 2], SignalError> {
    if !(fc > 0.0 && fs > 2.0 * fc) {
        return Err(SignalError::InvalidCutoff { fs, fc });
    }
    let k = (PI * fc / fs).tan();
    let k2 = k * k;
    let section = |idx: usize| {
        let two_zeta = 2.0 * ((2 * idx + 1) as f64 * PI / (2 * FILTER_ORDER) as f64).sin();
        let norm = 1.0 / (1.0 + two_zeta * k + k2);
        let b0 = k2 * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - two_zeta * k + k2) * norm],
        }
    };
    Ok([section(0), section(1)])
}

fn run_cascade(sections: &[Biquad; 2], x: &mut [f64]) {
    let mut level = x[0];
    for s in sections {
        let z = s.steady_state(level);
        s.run(x, z);
        level *= s.dc_gain();
    }
}

/// Forward-backward Butterworth filtering with odd-reflection padding.
pub fn zero_phase_filter(signal: &[f64], fs: f64, fc: f64) -> Result<Vec<f64>, SignalError> {
    let sections = butterworth_lowpass(fs, fc)?;
    let n = signal.len();
    let min = 6 * FILTER_ORDER + 1;
    if n < min.max(PAD_LEN + 1) {
        return Err(SignalError::SignalTooShort { len: n, min });
    }
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * PAD_LEN);
    ext.extend((1..=PAD_LEN).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=PAD_LEN).map(|i| 2.0 * last - signal[n - 1 - i]));

    run_cascade(&sections, &mut ext);
    ext.reverse();
    run_cascade(&sections, &mut ext);
    ext.reverse();
    Ok(ext[PAD_LEN..PAD_LEN + n].to_vec())
}

/// Every `factor`-th sample starting at index 0.
pub fn decimate(signal: &[f64], factor: usize) -> Vec<f64> {
    let factor = factor.max(1);
    signal.iter().step_by(factor).copied().collect()
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Average power of the decimated signal relative to the original.
///
/// By Parseval both totals equal the per-sample mean square, so the ratio
/// is taken directly in the time domain.
pub fn power_retention(original: &[f64], downsampled: &[f64]) -> f64 {
    let p0 = mean_square(original);
    if p0 == 0.0 {
        return if mean_square(downsampled) == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
    }
    mean_square(downsampled) / p0
}
