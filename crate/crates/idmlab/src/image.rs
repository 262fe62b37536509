//! Small RGB image container used by the synthetic world and the pipeline.

use crate::error::{Error, Result};

/// 8-bit RGB image stored channel-major (3 planes of H·W), row-major within
/// each plane — the same layout the episode archive uses on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image { height, width, data: vec![0; 3 * height * width] }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "image data of {} bytes for {height}x{width}",
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let hw = self.height * self.width;
        let p = y * self.width + x;
        [self.data[p], self.data[hw + p], self.data[2 * hw + p]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let hw = self.height * self.width;
        let p = y * self.width + x;
        self.data[p] = rgb[0];
        self.data[hw + p] = rgb[1];
        self.data[2 * hw + p] = rgb[2];
    }

    /// Scale pixel values to [0,1] f64, keeping the channel-major layout.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / 255.0).collect()
    }
}
