use super::Real;
use crate::{Error, Result};

/// Row-major 2-D tensor. Vectors are represented as plain slices; a tensor
/// with one column doubles as a column vector where a shape is needed.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: F) {
        self.data[i * self.cols + j] = value;
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    /// `self · x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| dot(self.row(i), x))
            .collect()
    }

    /// `selfᵀ · y` accumulated into `out` (length `cols`).
    pub fn matvec_t_acc(&self, y: &[F], out: &mut [F]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &yi) in y.iter().enumerate() {
            if yi == F::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * yi;
            }
        }
    }

    /// `self += a · bᵀ`.
    pub fn add_outer(&mut self, a: &[F], b: &[F]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == F::zero() {
                continue;
            }
            for (w, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *w += ai * bj;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: F) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree() {
        let w = Tensor::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(w.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        w.matvec_t_acc(&[1.0, 1.0], &mut out);
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
        assert_eq!(w.transpose().matvec(&[1.0, 1.0]), out);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Tensor::from_vec(2, 2, vec![0.0f32; 3]),
            Err(Error::Shape(_))
        ));
    }
}
