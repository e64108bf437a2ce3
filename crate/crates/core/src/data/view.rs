use std::collections::HashMap;

use super::Sample;
use crate::error::{Error, Result};

/// Active-mask view over an immutable base dataset.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    base: &'a [Sample],
    active: Vec<bool>,
}

impl<'a> DatasetView<'a> {
    pub fn full(base: &'a [Sample]) -> Self {
        DatasetView {
            base,
            active: vec![true; base.len()],
        }
    }

    pub fn base(&self) -> &'a [Sample] {
        self.base
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// Positions (into `base`) of the active samples.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.base.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_samples(&self) -> impl Iterator<Item = &'a Sample> + '_ {
        self.base.iter().zip(&self.active).filter(|(_, &a)| a).map(|(s, _)| s)
    }

    pub fn len(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// View of `base` with exactly the samples in `dropped_ids` masked out.
///
/// Masks are always relative to the original base, so re-admission is simply
/// a smaller `dropped_ids` set on the next call.
pub fn apply_mask<'a>(base: &'a [Sample], dropped_ids: impl IntoIterator<Item = usize>) -> Result<DatasetView<'a>> {
    let index: HashMap<usize, usize> = base.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut view = DatasetView::full(base);
    for id in dropped_ids {
        let &i = index.get(&id).ok_or(Error::UnknownSample(id))?;
        view.active[i] = false;
    }
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn base(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|id| Sample {
                id,
                image: Tensor::zeros(&[1, 1, 3]),
                score: 4,
                truth_mask: None,
            })
            .collect()
    }

    #[test]
    fn drop_nothing_and_everything() {
        let b = base(5);
        assert_eq!(apply_mask(&b, []).unwrap().len(), 5);
        assert!(apply_mask(&b, 0..5).unwrap().is_empty());
    }

    #[test]
    fn set_difference() {
        let b = base(5);
        let v = apply_mask(&b, [1, 3]).unwrap();
        let ids: Vec<usize> = v.active_samples().map(|s| s.id).collect();
        assert_eq!(ids, vec![0, 2, 4]);
        assert_eq!(b.len(), 5);
    }

    #[test]
    fn unknown_id_is_an_error() {
        let b = base(3);
        assert!(matches!(apply_mask(&b, [7]), Err(Error::UnknownSample(7))));
    }
}
