use std::fmt;

/// RGB colour of one rendered cell.
pub type Rgb = [u8; 3];

/// Colour per cell role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Palette {
    pub floor: Rgb,
    pub wall: Rgb,
    pub agent: Rgb,
    pub block: Rgb,
    pub switch: Rgb,
    pub door_closed: Rgb,
    pub door_open: Rgb,
    pub stochastic: Rgb,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            floor: [0, 0, 0],
            wall: [128, 128, 128],
            agent: [255, 0, 0],
            block: [0, 255, 0],
            switch: [255, 255, 0],
            door_closed: [139, 69, 19],
            door_open: [255, 255, 255],
            stochastic: [0, 0, 139],
        }
    }
}

/// A rendered frame: one RGB byte triple per grid cell, row-major.
///
/// Goals are observations too; two frames match iff their bytes match.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    rows: usize,
    cols: usize,
    pixels: Box<[u8]>,
}

impl Observation {
    pub const CHANNELS: usize = 3;

    /// Panics if `pixels` does not hold `rows * cols` triples.
    pub fn from_pixels(rows: usize, cols: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), rows * cols * Self::CHANNELS, "pixel buffer size");
        Self {
            rows,
            cols,
            pixels: pixels.into_boxed_slice(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `[rows, cols, channels]`
    pub fn shape(&self) -> [usize; 3] {
        [self.rows, self.cols, Self::CHANNELS]
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.cols + col) * Self::CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Appends the frame scaled to `[0, 1]` in HWC order.
    pub fn write_unit(&self, out: &mut Vec<f64>) {
        out.extend(self.pixels.iter().map(|&b| f64::from(b) / 255.0));
    }

    /// Binary PPM (P6), each cell drawn as a `scale`×`scale` square.
    pub fn to_ppm(&self, scale: usize) -> Vec<u8> {
        let scale = scale.max(1);
        let (w, h) = (self.cols * scale, self.rows * scale);
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.reserve(w * h * 3);
        for row in 0..h {
            for col in 0..w {
                out.extend_from_slice(&self.pixel(row / scale, col / scale));
            }
        }
        out
    }
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digest = self.pixels.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
        });
        write!(f, "Observation({}x{}, {digest:016x})", self.rows, self.cols)
    }
}
