//! Dense row-major 2D grids used for images and binary masks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

pub type Image = Grid<f64>;
pub type Mask = Grid<u8>;

impl<T: Copy + Default> Grid<T> {
    pub fn new(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![T::default(); h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!(
                "grid data length {} does not match {}x{}",
                data.len(),
                h,
                w
            )));
        }
        Ok(Grid { h, w, data })
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.w + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn same_shape<U: Copy + Default>(&self, other: &Grid<U>) -> bool {
        self.h == other.h && self.w == other.w
    }
}

impl Mask {
    /// Checks that every value is 0 or 1.
    pub fn validate_binary(&self) -> Result<()> {
        for (i, &v) in self.data.iter().enumerate() {
            if v > 1 {
                return Err(Error::parse(format!(
                    "mask value {} at index {} is not binary",
                    v, i
                )));
            }
        }
        Ok(())
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Row range [rmin, rmax] of set pixels, or None for an empty mask.
    pub fn row_extent(&self) -> Option<(usize, usize)> {
        let mut rmin = None;
        let mut rmax = None;
        for r in 0..self.h {
            if (0..self.w).any(|c| self.get(r, c) == 1) {
                if rmin.is_none() {
                    rmin = Some(r);
                }
                rmax = Some(r);
            }
        }
        Some((rmin?, rmax?))
    }

    /// Restricts the mask to a half-open row band, keeping all columns.
    pub fn crop_rows(&self, rows: std::ops::Range<usize>) -> Mask {
        let h = rows.len();
        let mut out = Mask::new(h, self.w);
        for (i, r) in rows.enumerate() {
            for c in 0..self.w {
                out.set(i, c, self.get(r, c));
            }
        }
        out
    }
}
