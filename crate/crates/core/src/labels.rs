use crate::{Error, Result};

/// Per-pixel class indices in `0..=m`, row-major `height x width`.
///
/// Class `k` is nested inside class `k - 1`; class 0 is the outermost
/// (background) class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    m: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, m: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if m == 0 || m > u8::MAX as usize {
            return Err(Error::Invalid(format!("nesting depth m = {m} must lie in 1..=255")));
        }
        if let Some(&bad) = data.iter().find(|&&c| c as usize > m) {
            return Err(Error::Invalid(format!("label {bad} exceeds m = {m}")));
        }
        Ok(Self {
            height,
            width,
            m,
            data,
        })
    }

    /// A map filled with one class.
    pub fn filled(height: usize, width: usize, m: usize, class: u8) -> Result<Self> {
        Self::new(height, width, m, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Nesting depth; the map has `m + 1` classes.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        assert!(class as usize <= self.m, "class {class} exceeds m = {}", self.m);
        self.data[y * self.width + x] = class;
    }

    /// Pixel count per class, length `m + 1`.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m + 1];
        for &c in &self.data {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Indicator `y^c_i` of class `c` for every pixel.
    pub fn one_hot(&self, class: usize) -> Vec<f64> {
        self.data
            .iter()
            .map(|&c| if c as usize == class { 1.0 } else { 0.0 })
            .collect()
    }

    /// Class indices as reals, the regression targets `c_i`.
    pub fn as_targets(&self) -> Vec<f64> {
        self.data.iter().map(|&c| f64::from(c)).collect()
    }
}
