use crate::model::Matrix;

/// Per-column z-score transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub(crate) mean: Vec<f64>,
    pub(crate) scale: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread keep unit scale.
    pub fn fit(data: &Matrix) -> Self {
        let (n, c) = (data.rows(), data.cols());
        let mut mean = vec![0.0; c];
        for row in data.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in data.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            scale: vec![1.0; cols],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        let c = self.dim();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - self.mean[j]) / self.scale[j];
        }
        out
    }

    pub fn inverse(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        let c = self.dim();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = *v * self.scale[j] + self.mean[j];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_moments() {
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&m);
        let z = s.transform(&m);
        let col0: Vec<f64> = z.iter_rows().map(|r| r[0]).collect();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        assert!((col0.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        // constant column is only centred
        assert!(z.iter_rows().all(|r| r[1] == 0.0));
        let back = s.inverse(&z);
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
