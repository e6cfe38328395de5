//! Dense floating-point images shared by the renderer, the losses and I/O.

/// Row-major, channel-interleaved image of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Luma weights used whenever a color image is reduced to grayscale.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Luma reduction; single-channel images are returned unchanged.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        assert_eq!(self.channels, 3, "grayscale conversion expects RGB");
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample of channel `c` at continuous coordinates (pixel centers on
    /// integers). Returns the value and its derivative with respect to `(x, y)`,
    /// or `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> Option<(f64, [f64; 2])> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.get(x0, y0, c);
        let v10 = self.get(x1, y0, c);
        let v01 = self.get(x0, y1, c);
        let v11 = self.get(x1, y1, c);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        let value = top + (bottom - top) * fy;
        let dx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        let dy = bottom - top;
        Some((value, [dx, dy]))
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn psnr(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        let mse = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }
}
