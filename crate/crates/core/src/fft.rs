//! Two-dimensional DFT helpers on top of `rustfft`.
//!
//! Plans are built per [`Fft2`] value; nothing is cached globally.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, &*self.row_fwd, &*self.col_fwd);
    }

    /// Inverse transform scaled by `1/(rows*cols)`, in place.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, &*self.row_inv, &*self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    fn run(&self, data: &mut Array2<Complex64>, row_fft: &dyn Fft<f64>, col_fft: &dyn Fft<f64>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "FFT size mismatch");
        let (rows, cols) = (self.rows, self.cols);
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().to_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        row_fft.process(buf);

        let mut transposed = vec![Complex64::default(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                transposed[c * rows + r] = buf[r * cols + c];
            }
        }
        col_fft.process(&mut transposed);
        for c in 0..cols {
            for r in 0..rows {
                buf[r * cols + c] = transposed[c * rows + r];
            }
        }
    }

    pub fn forward_real(&self, plane: &Array2<f64>) -> Array2<Complex64> {
        let mut data = plane.mapv(|v| Complex64::new(v, 0.0));
        self.forward(&mut data);
        data
    }

    /// Transfer function of a kernel whose origin is its centre pixel
    /// `(rows/2, cols/2)`, on this transform's grid.
    pub fn kernel_transfer(&self, kernel: &Array2<f64>) -> Result<Array2<Complex64>> {
        let embedded = embed_kernel(kernel, self.rows, self.cols)?;
        let mut data = embedded.mapv(|v| Complex64::new(v, 0.0));
        self.forward(&mut data);
        Ok(data)
    }
}

/// Places `kernel` on a `rows x cols` grid with its centre pixel at the
/// origin, wrapping negative offsets around.
pub fn embed_kernel(kernel: &Array2<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let (kr, kc) = kernel.dim();
    if kr > rows || kc > cols {
        return Err(Error::Dimension(format!(
            "kernel {kr}x{kc} does not fit plane {rows}x{cols}"
        )));
    }
    let (cr, cc) = (kr / 2, kc / 2);
    let mut out = Array2::zeros((rows, cols));
    for ((i, j), &v) in kernel.indexed_iter() {
        let r = (i + rows - cr) % rows;
        let c = (j + cols - cc) % cols;
        out[[r, c]] += v;
    }
    Ok(out)
}

/// Moves the zero-frequency sample from `(0, 0)` to `(rows/2, cols/2)`.
pub fn fftshift<T: Clone>(data: &Array2<T>) -> Array2<T> {
    let (rows, cols) = data.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        data[[(r + rows - rows / 2) % rows, (c + cols - cols / 2) % cols]].clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &Array2<f64>) -> Array2<Complex64> {
        let (m, n) = x.dim();
        Array2::from_shape_fn((m, n), |(a, b)| {
            let mut acc = Complex64::default();
            for ((i, j), &v) in x.indexed_iter() {
                let phase = -2.0 * PI * ((a * i) as f64 / m as f64 + (b * j) as f64 / n as f64);
                acc += Complex64::from_polar(v, phase);
            }
            acc
        })
    }

    #[test]
    fn matches_naive_dft_on_rectangular_grid() {
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let fft = Fft2::new(5, 6);
        let got = fft.forward_real(&x);
        let want = naive_dft(&x);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let x = Array2::from_shape_fn((8, 3), |(i, j)| (i as f64).sin() + j as f64);
        let fft = Fft2::new(8, 3);
        let mut data = fft.forward_real(&x);
        fft.inverse(&mut data);
        for (g, w) in data.iter().zip(x.iter()) {
            assert!((g.re - w).abs() < 1e-12 && g.im.abs() < 1e-12);
        }
    }

    #[test]
    fn embed_puts_centre_at_origin() {
        let mut k = Array2::zeros((3, 3));
        k[[1, 1]] = 1.0;
        k[[0, 2]] = 0.5;
        let e = embed_kernel(&k, 4, 5).unwrap();
        assert_eq!(e[[0, 0]], 1.0);
        assert_eq!(e[[3, 1]], 0.5);
        assert!(embed_kernel(&k, 2, 5).is_err());
    }

    #[test]
    fn shift_centres_zero_frequency() {
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64);
        let s = fftshift(&x);
        assert_eq!(s[[2, 2]], 0.0);
        assert_eq!(s[[0, 0]], x[[2, 3]]);
    }
}
