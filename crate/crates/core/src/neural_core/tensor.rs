use super::NnError;

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::shape("Tensor2::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `[self | other]` along columns.
    pub fn hconcat(&self, other: &Tensor2) -> Result<Tensor2, NnError> {
        if self.rows != other.rows {
            return Err(NnError::shape("Tensor2::hconcat", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut out = Tensor2::zeros(self.rows, cols);
        for r in 0..self.rows {
            out.row_mut(r)[..self.cols].copy_from_slice(self.row(r));
            out.row_mut(r)[self.cols..].copy_from_slice(other.row(r));
        }
        Ok(out)
    }

    /// Columns `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> Tensor2 {
        let mut out = Tensor2::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    pub(crate) fn debug_check_finite(&self) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite tensor value"
        );
    }
}

/// `batch × steps × features`, row-major with features fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, steps: usize, features: usize) -> Self {
        Self {
            batch,
            steps,
            features,
            data: vec![0.0; batch * steps * features],
        }
    }

    pub fn from_vec(
        batch: usize,
        steps: usize,
        features: usize,
        data: Vec<f64>,
    ) -> Result<Self, NnError> {
        if data.len() != batch * steps * features {
            return Err(NnError::shape(
                "Tensor3::from_vec",
                batch * steps * features,
                data.len(),
            ));
        }
        Ok(Self {
            batch,
            steps,
            features,
            data,
        })
    }

    #[inline]
    fn offset(&self, b: usize, t: usize) -> usize {
        (b * self.steps + t) * self.features
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, f: usize) -> f64 {
        self.data[self.offset(b, t) + f]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, f: usize, v: f64) {
        let o = self.offset(b, t);
        self.data[o + f] = v;
    }

    /// Feature vector of sample `b` at step `t`.
    pub fn at(&self, b: usize, t: usize) -> &[f64] {
        let o = self.offset(b, t);
        &self.data[o..o + self.features]
    }

    pub fn at_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let o = self.offset(b, t);
        let f = self.features;
        &mut self.data[o..o + f]
    }

    /// Copies step `t` of every sample into a `batch × features` matrix.
    pub fn step(&self, t: usize) -> Tensor2 {
        let mut out = Tensor2::zeros(self.batch, self.features);
        for b in 0..self.batch {
            out.row_mut(b).copy_from_slice(self.at(b, t));
        }
        out
    }

    pub fn set_step(&mut self, t: usize, x: &Tensor2) {
        debug_assert_eq!((x.rows, x.cols), (self.batch, self.features));
        for b in 0..self.batch {
            self.at_mut(b, t).copy_from_slice(x.row(b));
        }
    }

    pub fn add_step(&mut self, t: usize, x: &Tensor2) {
        debug_assert_eq!((x.rows, x.cols), (self.batch, self.features));
        for b in 0..self.batch {
            for (a, v) in self.at_mut(b, t).iter_mut().zip(x.row(b)) {
                *a += v;
            }
        }
    }

    /// Per-step `[self | other]` along features.
    pub fn concat_features(&self, other: &Tensor3) -> Result<Tensor3, NnError> {
        if self.batch != other.batch || self.steps != other.steps {
            return Err(NnError::shape(
                "Tensor3::concat_features",
                self.batch * self.steps,
                other.batch * other.steps,
            ));
        }
        let f = self.features + other.features;
        let mut out = Tensor3::zeros(self.batch, self.steps, f);
        for b in 0..self.batch {
            for t in 0..self.steps {
                let dst = out.at_mut(b, t);
                dst[..self.features].copy_from_slice(self.at(b, t));
                dst[self.features..].copy_from_slice(other.at(b, t));
            }
        }
        Ok(out)
    }

    /// Features `[start, start + width)` of every step.
    pub fn feature_slice(&self, start: usize, width: usize) -> Tensor3 {
        let mut out = Tensor3::zeros(self.batch, self.steps, width);
        for b in 0..self.batch {
            for t in 0..self.steps {
                out.at_mut(b, t)
                    .copy_from_slice(&self.at(b, t)[start..start + width]);
            }
        }
        out
    }

    /// View as a `(batch·steps) × features` matrix (same storage order).
    pub fn into_flat(self) -> Tensor2 {
        Tensor2 {
            rows: self.batch * self.steps,
            cols: self.features,
            data: self.data,
        }
    }

    pub fn from_flat(x: Tensor2, batch: usize, steps: usize) -> Result<Tensor3, NnError> {
        Tensor3::from_vec(batch, steps, x.cols, x.data)
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (cv, bv) in ci.iter_mut().zip(bp) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[k×n] += aᵀ · b` with `a: m×k`, `b: m×n`.
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in cp.iter_mut().zip(bi) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×k] += a · bᵀ` with `a: m×n`, `b: k×n`.
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert!(a.len() >= m * n && b.len() >= k * n && c.len() >= m * k);
    for i in 0..m {
        let ai = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (x, y) in ai.iter().zip(bp) {
                acc += x * y;
            }
            c[i * k + p] += acc;
        }
    }
}
