/// A fixed, ordered collection of parameter blocks.
///
/// The visiting order defines the flat layout used by the optimizer,
/// serialization and gradient checking. Gradients use the same type.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |b| n += b.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |b| out.extend_from_slice(b));
        out
    }

    /// Overwrites every block from `flat` (length must equal `param_count`).
    fn assign(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |b| {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        });
        debug_assert_eq!(off, flat.len());
    }

    fn fill(&mut self, v: f64) {
        self.visit_mut(&mut |b| b.iter_mut().for_each(|x| *x = v));
    }
}

impl ParamSet for Vec<f64> {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self)
    }
}

/// Largest `|a − n| / max(|a|, |n|, 1e-8)` between the analytic gradient
/// and central differences of `loss` with step `h`, over every parameter.
pub fn gradient_check<P: ParamSet + ?Sized>(
    params: &mut P,
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&P) -> f64,
) -> f64 {
    let base = params.flatten();
    assert_eq!(base.len(), analytic.len(), "gradient length mismatch");
    let mut probe = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        params.assign(&probe);
        let up = loss(params);
        probe[i] = base[i] - h;
        params.assign(&probe);
        let down = loss(params);
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    params.assign(&base);
    worst
}
