use crate::error::{Error, Result};

/// Integer instance labels on a voxel grid, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 3],
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], data: Vec<u32>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "label data length {} does not match {dims:?}",
                data.len()
            )));
        }
        Ok(LabelVolume { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        LabelVolume {
            dims,
            data: vec![0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[self.index(x, y, z)]
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Voxel count per label, indexed by label id.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.max_label() as usize + 1];
        for &l in &self.data {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Renumbers labels to the contiguous set {0..K} in order of first
    /// appearance, dropping ids that are absent.
    pub fn relabel_sequential(&self) -> LabelVolume {
        let mut map = vec![u32::MAX; self.max_label() as usize + 1];
        map[0] = 0;
        let mut next = 1;
        let data = self
            .data
            .iter()
            .map(|&l| {
                if map[l as usize] == u32::MAX {
                    map[l as usize] = next;
                    next += 1;
                }
                map[l as usize]
            })
            .collect();
        LabelVolume {
            dims: self.dims,
            data,
        }
    }

    /// True when the positive labels are exactly {1..K}, each nonempty.
    pub fn is_contiguous(&self) -> bool {
        self.counts().iter().skip(1).all(|&c| c > 0)
    }
}
