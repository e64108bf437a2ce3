/// Binary `H×W` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask data length must equal height × width");
        BinaryMask { height, width, data }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask::new(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Nearest-neighbour resample to `height × width`.
    pub fn resized(&self, height: usize, width: usize) -> BinaryMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = BinaryMask::empty(height, width);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                out.data[y * width + x] = self.get(sy, x * self.width / width);
            }
        }
        out
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let other = other.resized(self.height, self.width);
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = BinaryMask::new(1, 4, vec![true, true, false, false]);
        let b = BinaryMask::new(1, 4, vec![false, true, true, false]);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(BinaryMask::empty(2, 2).iou(&BinaryMask::empty(2, 2)), 1.0);
    }

    #[test]
    fn resize_nearest() {
        let a = BinaryMask::new(2, 2, vec![true, false, false, true]);
        let big = a.resized(4, 4);
        assert_eq!(big.count(), 8);
        assert!(big.get(1, 1) && !big.get(1, 2) && big.get(3, 3));
    }
}
