use crate::error::{Error, Result};

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(Error::BadTensor {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts an `H×W×C` image into `C×H×W` layout.
    pub fn hwc_to_chw(&self) -> Result<Tensor> {
        let [h, w, c] = self.shape[..] else {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                actual: self.shape.clone(),
            });
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(vec![c, h, w], out)
    }

    /// Stacks equally-shaped `H×W×C` images into one `B×C×H×W` batch.
    pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
        let mut shape: Option<Vec<usize>> = None;
        let mut data = Vec::new();
        let mut count = 0;
        for img in images {
            let chw = img.hwc_to_chw()?;
            match &shape {
                Some(s) if s != chw.shape() => {
                    return Err(Error::ShapeMismatch {
                        expected: s.clone(),
                        actual: chw.shape().to_vec(),
                    })
                }
                Some(_) => {}
                None => shape = Some(chw.shape().to_vec()),
            }
            data.extend_from_slice(chw.data());
            count += 1;
        }
        let Some(mut shape) = shape else {
            return Err(Error::EmptyDataset);
        };
        shape.insert(0, count);
        Tensor::new(shape, data)
    }
}
