use crate::error::{Error, Result};
use crate::nn::{ClassLabel, FeatureVector};

/// Labeled samples sharing one feature count, labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<(FeatureVector, ClassLabel)>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<(FeatureVector, ClassLabel)>, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        if let Some((first, _)) = samples.first() {
            let n = first.len();
            for (k, (x, y)) in samples.iter().enumerate() {
                if x.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: x.len(),
                    });
                }
                if y.index() >= class_count {
                    return Err(Error::InvalidParameter(format!(
                        "sample {k} has label {y}, but there are only {class_count} classes"
                    )));
                }
            }
        }
        Ok(LabeledDataset {
            samples,
            class_count,
        })
    }

    pub fn samples(&self) -> &[(FeatureVector, ClassLabel)] {
        &self.samples
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature count, or `None` for an empty dataset.
    pub fn feature_count(&self) -> Option<usize> {
        self.samples.first().map(|(x, _)| x.len())
    }

    pub fn get(&self, index: usize) -> Option<&(FeatureVector, ClassLabel)> {
        self.samples.get(index)
    }
}
